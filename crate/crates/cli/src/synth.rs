//! Synthetic multimodal corpus: DICOM files with geometric pixel patterns
//! and class-consistent tags, one diagnosis per exam, and a truth table.
//!
//! Every planted class is a (modality, body part) pair. The three sources
//! carry overlapping but different evidence. Tags encode the modality
//! (acquisition values, image type, patient position, spacing) next to a
//! few uninformative ones. Diagnoses name the body part and use some
//! modality-specific wording. Images show both: the shape follows the body
//! part and the texture the modality. Each source has its own noise.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use radlabel_core::dicom::writer::DicomWriter;
use radlabel_core::dicom::{tag_by_name, tag_vr, tags, Vr};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Planted classes in the order they are taken.
pub const CLASSES: [(&str, &str); 8] = [
    ("CT", "HEAD"),
    ("CT", "CHEST"),
    ("MR", "HEAD"),
    ("MR", "KNEE"),
    ("CR", "CHEST"),
    ("CR", "HAND"),
    ("CT", "ABDOMEN"),
    ("MR", "LSPINE"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub classes: usize,
    pub per_class: usize,
    /// Per-class instance counts; overrides `per_class` when set, which is
    /// how an unbalanced corpus is requested.
    pub counts: Option<Vec<usize>>,
    pub instances_per_exam: usize,
    /// Base probability that an auxiliary tag is absent. The effective rate
    /// depends on the modality, so the missingness is MAR, not MCAR.
    pub missingness: f64,
    pub image_size: usize,
    /// Standard deviation of the additive pixel noise on a [0, 1] scale.
    pub image_noise: f64,
    /// Probability that an image is drawn with another body part's shape.
    pub image_confusion: f64,
    /// Probability that a diagnosis uses another body part's vocabulary.
    pub text_confusion: f64,
    /// Probability that a categorical auxiliary tag takes a value drawn
    /// from another modality.
    pub tag_confusion: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 200,
            counts: None,
            instances_per_exam: 1,
            missingness: 0.1,
            image_size: 64,
            image_noise: 0.25,
            image_confusion: 0.15,
            text_confusion: 0.1,
            tag_confusion: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub files: usize,
    pub exams: usize,
    pub diagnoses: usize,
}

impl SynthOptions {
    fn counts(&self) -> Result<Vec<usize>> {
        if !(2..=CLASSES.len()).contains(&self.classes) {
            return Err(PipelineError::Config(format!("classes must be in 2..={}, got {}", CLASSES.len(), self.classes)));
        }
        let counts = self.counts.clone().unwrap_or_else(|| vec![self.per_class; self.classes]);
        if counts.len() != self.classes {
            return Err(PipelineError::Config(format!("{} counts given for {} classes", counts.len(), self.classes)));
        }
        if self.instances_per_exam == 0 || self.image_size < 8 {
            return Err(PipelineError::Config("instances_per_exam must be ≥ 1 and image_size ≥ 8".into()));
        }
        for p in [self.missingness, self.image_confusion, self.text_confusion, self.tag_confusion] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PipelineError::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(counts)
    }
}

struct Exam {
    index: usize,
    class: usize,
    instances: usize,
}

struct Generated {
    files: Vec<(String, Vec<u8>)>,
    diagnosis: String,
    truth: Vec<[String; 5]>,
}

/// Writes `dicom/<exam>/<instance>.dcm`, `diagnoses.csv` and `truth.csv`
/// under `dir`, creating it if needed. The output depends only on the
/// options.
pub fn generate_synthetic(dir: &Path, opts: &SynthOptions) -> Result<SynthSummary> {
    let counts = opts.counts()?;
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut exams = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        let mut left = n;
        while left > 0 {
            let m = left.min(opts.instances_per_exam);
            exams.push(Exam { index: exams.len(), class, instances: m });
            left -= m;
        }
    }
    let generated: Vec<Generated> = exams.par_iter().map(|e| generate_exam(e, opts)).collect();

    let dicom_dir = dir.join("dicom");
    let mut diag = csv::Writer::from_path(dir.join("diagnoses.csv")).map_err(PipelineError::from)?;
    diag.write_record(["exam_id", "diagnosis"])?;
    let mut truth = csv::Writer::from_path(dir.join("truth.csv"))?;
    truth.write_record(["instance_id", "exam_id", "class", "modality", "body_part"])?;
    let mut files = 0;
    for (e, g) in exams.iter().zip(&generated) {
        let exam_dir = dicom_dir.join(exam_id(e.index));
        fs::create_dir_all(&exam_dir).map_err(|err| PipelineError::io(&exam_dir, err))?;
        for (name, bytes) in &g.files {
            let p = exam_dir.join(name);
            fs::File::create(&p).and_then(|mut f| f.write_all(bytes)).map_err(|err| PipelineError::io(&p, err))?;
            files += 1;
        }
        diag.write_record([exam_id(e.index), g.diagnosis.clone()])?;
        for row in &g.truth {
            truth.write_record(row)?;
        }
    }
    diag.flush().map_err(|e| PipelineError::io(dir.join("diagnoses.csv"), e))?;
    truth.flush().map_err(|e| PipelineError::io(dir.join("truth.csv"), e))?;
    Ok(SynthSummary { files, exams: exams.len(), diagnoses: exams.len() })
}

fn exam_id(index: usize) -> String {
    format!("2.25.7301.{}", index + 1)
}

fn generate_exam(exam: &Exam, opts: &SynthOptions) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(exam.index as u64);
    let (modality, body_part) = CLASSES[exam.class];
    let study = exam_id(exam.index);
    let diagnosis = diagnosis_text(modality, body_part, opts.classes, opts.text_confusion, &mut rng);
    let mut files = Vec::new();
    let mut truth = Vec::new();
    for j in 0..exam.instances {
        let instance = format!("{study}.{}", j + 1);
        let bytes = instance_bytes(&study, &instance, j, modality, body_part, opts, &mut rng);
        files.push((format!("{}.dcm", j + 1), bytes));
        truth.push([instance, study.clone(), exam.class.to_string(), modality.to_owned(), body_part.to_owned()]);
    }
    Generated { files, diagnosis, truth }
}

fn put(w: &mut DicomWriter, name: &str, value: &str) {
    let tag = tag_by_name(name).expect("synthetic tags are in the dictionary");
    w.text(tag, tag_vr(tag).expect("dictionary tag has a VR"), value);
}

/// How much more often an auxiliary tag is missing for each modality.
fn missing_factor(modality: &str) -> f64 {
    match modality {
        "CT" => 0.5,
        "MR" => 1.0,
        _ => 1.5,
    }
}

fn modality_index(modality: &str) -> usize {
    match modality {
        "CT" => 0,
        "MR" => 1,
        _ => 2,
    }
}

const MANUFACTURERS: [[&str; 2]; 3] = [["SIEMENS", "GE"], ["PHILIPS", "SIEMENS"], ["AGFA", "FUJI"]];
const SOP_CLASSES: [&str; 3] = ["1.2.840.10008.5.1.4.1.1.2", "1.2.840.10008.5.1.4.1.1.4", "1.2.840.10008.5.1.4.1.1.1"];
/// Mean and spread per modality (CT, MR, CR).
const KVP: [(f64, f64); 3] = [(120.0, 8.0), (60.0, 25.0), (75.0, 10.0)];
const TUBE_CURRENT: [(f64, f64); 3] = [(260.0, 60.0), (120.0, 80.0), (200.0, 40.0)];
const EXPOSURE: [(f64, f64); 3] = [(900.0, 200.0), (1500.0, 600.0), (400.0, 150.0)];
const THICKNESS: [[&str; 3]; 3] = [["1", "2.5", "5"], ["3", "4", "5"], ["1", "1", "2.5"]];
const FIELD: [[&str; 2]; 3] = [["0", "0"], ["1.5", "3"], ["0", "0"]];
const IMAGE_TYPE: [[&str; 2]; 3] = [
    ["ORIGINAL\\PRIMARY\\AXIAL", "DERIVED\\SECONDARY\\REFORMATTED"],
    ["ORIGINAL\\PRIMARY\\M", "DERIVED\\SECONDARY\\MPR"],
    ["ORIGINAL\\PRIMARY\\OTHER", "DERIVED\\PRIMARY\\POST_PROCESSED"],
];
const POSITION: [[&str; 2]; 3] = [["HFS", "FFS"], ["HFS", "FFS"], ["PA", "AP"]];
const SPACING: [[&str; 3]; 3] = [["0.6", "0.7", "0.8"], ["0.5", "0.9", "1"], ["0.1", "0.15", "0.2"]];

fn study_description(modality: &str, body_part: &str, rng: &mut ChaCha8Rng) -> String {
    let phrase = match body_part {
        "HEAD" => ["head", "brain"].choose(rng).copied(),
        "CHEST" => ["chest", "thorax"].choose(rng).copied(),
        "KNEE" => ["knee left", "knee right"].choose(rng).copied(),
        "HAND" => ["hand", "hand ap/obl"].choose(rng).copied(),
        "ABDOMEN" => ["abdomen", "abdomen and pelvis"].choose(rng).copied(),
        _ => ["l-spine", "lumbar spine"].choose(rng).copied(),
    };
    format!("{modality} {}", phrase.unwrap_or_default()).to_uppercase()
}

fn instance_bytes(
    study: &str,
    instance: &str,
    j: usize,
    modality: &str,
    body_part: &str,
    opts: &SynthOptions,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let m = modality_index(modality);
    let p_missing = (opts.missingness * missing_factor(modality)).min(1.0);
    let mut w = DicomWriter::new(true);
    w.text(tags::SOP_INSTANCE_UID, Vr::UI, instance);
    w.text(tags::STUDY_INSTANCE_UID, Vr::UI, study);
    w.text(tags::SERIES_INSTANCE_UID, Vr::UI, &format!("{study}.0"));
    w.text(tags::MODALITY, Vr::CS, modality);
    w.text(tags::STUDY_DESCRIPTION, Vr::LO, &study_description(modality, body_part, rng));
    put(&mut w, "SOPClassUID", SOP_CLASSES[m]);
    put(&mut w, "InstanceNumber", &(j + 1).to_string());
    if !rng.random_bool(p_missing) {
        w.text(tags::BODY_PART_EXAMINED, Vr::CS, body_part);
    }

    // the modality a categorical tag is drawn from; sometimes another one
    let source_modality = |rng: &mut ChaCha8Rng| if rng.random_bool(opts.tag_confusion) { rng.random_range(0..3) } else { m };
    let mut aux: Vec<(&str, String)> = Vec::new();
    let s = source_modality(rng);
    aux.push(("Manufacturer", MANUFACTURERS[s].choose(rng).copied().unwrap_or_default().to_owned()));
    let s = source_modality(rng);
    aux.push(("SliceThickness", THICKNESS[s].choose(rng).copied().unwrap_or_default().to_owned()));
    let s = source_modality(rng);
    aux.push(("MagneticFieldStrength", FIELD[s].choose(rng).copied().unwrap_or_default().to_owned()));
    let gauss = |(mu, sd): (f64, f64), rng: &mut ChaCha8Rng| Normal::new(mu, sd).expect("positive spread").sample(rng).max(1.0);
    aux.push(("KVP", format!("{:.1}", gauss(KVP[m], rng))));
    aux.push(("XRayTubeCurrent", format!("{:.0}", gauss(TUBE_CURRENT[m], rng))));
    aux.push(("ExposureTime", format!("{:.0}", gauss(EXPOSURE[m], rng))));
    let s = source_modality(rng);
    aux.push(("ImageType", IMAGE_TYPE[s].choose(rng).copied().unwrap_or_default().to_owned()));
    let s = source_modality(rng);
    aux.push(("PatientPosition", POSITION[s].choose(rng).copied().unwrap_or_default().to_owned()));
    let s = source_modality(rng);
    let spacing = SPACING[s].choose(rng).copied().unwrap_or_default();
    aux.push(("PixelSpacing", format!("{spacing}\\{spacing}")));
    // unrelated to the class
    aux.push(("PatientSex", ["M", "F"].choose(rng).copied().unwrap_or_default().to_owned()));
    for (name, value) in aux {
        if !rng.random_bool(p_missing) {
            put(&mut w, name, &value);
        }
    }

    let size = opts.image_size;
    let intercept = if modality == "CT" { -1024.0 } else { 0.0 };
    let pixels = render(modality, body_part, opts, rng);
    w.u16(tags::SAMPLES_PER_PIXEL, 1);
    w.text(tags::PHOTOMETRIC, Vr::CS, "MONOCHROME2");
    w.u16(tags::ROWS, size as u16);
    w.u16(tags::COLUMNS, size as u16);
    w.u16(tags::BITS_ALLOCATED, 16);
    w.u16(tags::BITS_STORED, 12);
    w.u16(tags::PIXEL_REPRESENTATION, 0);
    w.text(tags::RESCALE_SLOPE, Vr::DS, "1");
    w.text(tags::RESCALE_INTERCEPT, Vr::DS, &format!("{intercept}"));
    w.text(tags::WINDOW_CENTER, Vr::DS, &format!("{}", intercept + 2048.0));
    w.text(tags::WINDOW_WIDTH, Vr::DS, "4096");
    w.pixel_data(pixels.iter().flat_map(|v| v.to_le_bytes()).collect(), 16);
    w.to_bytes()
}

/// Foreground intensity in [0, 1] of a body-part shape at normalized
/// coordinates, 0 outside the shape.
fn shape(body_part: &str, u: f64, v: f64) -> f64 {
    let ellipse = |cu: f64, cv: f64, ru: f64, rv: f64| ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2) < 1.0;
    let rect = |u0: f64, u1: f64, v0: f64, v1: f64| (u0..u1).contains(&u) && (v0..v1).contains(&v);
    match body_part {
        "HEAD" => {
            if ellipse(0.0, 0.0, 0.55, 0.65) {
                0.5
            } else if ellipse(0.0, 0.0, 0.7, 0.8) {
                0.9
            } else {
                0.0
            }
        }
        "CHEST" => {
            if ellipse(-0.4, 0.0, 0.28, 0.6) || ellipse(0.4, 0.0, 0.28, 0.6) {
                0.15
            } else if rect(-0.85, 0.85, -0.8, 0.8) {
                0.6
            } else {
                0.0
            }
        }
        "KNEE" => {
            if rect(-0.25, 0.25, -0.95, -0.1) || rect(-0.22, 0.22, 0.1, 0.95) {
                0.9
            } else if rect(-0.55, 0.55, -0.95, 0.95) {
                0.4
            } else {
                0.0
            }
        }
        "HAND" => {
            let finger = (0..5).any(|f| rect(-0.43 + 0.2 * f as f64, -0.37 + 0.2 * f as f64, -0.85, 0.1));
            if rect(-0.45, 0.45, 0.1, 0.85) || finger {
                0.7
            } else {
                0.0
            }
        }
        "ABDOMEN" => {
            if ellipse(-0.4, 0.1, 0.12, 0.16) || ellipse(0.4, 0.1, 0.12, 0.16) {
                0.85
            } else if ellipse(0.0, 0.0, 0.9, 0.6) {
                0.55
            } else {
                0.0
            }
        }
        _ => {
            if (0..5).any(|k| rect(-0.2, 0.2, -0.95 + 0.4 * k as f64, -0.65 + 0.4 * k as f64)) {
                0.85
            } else if rect(-0.6, 0.6, -1.0, 1.0) {
                0.35
            } else {
                0.0
            }
        }
    }
}

/// Stored 12-bit values, row-major.
fn render(modality: &str, body_part: &str, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let size = opts.image_size;
    let drawn = if rng.random_bool(opts.image_confusion) {
        let others: Vec<&str> = CLASSES[..opts.classes].iter().map(|c| c.1).filter(|b| *b != body_part).collect();
        others.choose(rng).copied().unwrap_or(body_part)
    } else {
        body_part
    };
    let scale = rng.random_range(0.85..1.15);
    let (du, dv) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let noise = Normal::new(0.0, opts.image_noise.max(f64::MIN_POSITIVE)).expect("positive spread");
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let x = 2.0 * (c as f64 + 0.5) / size as f64 - 1.0;
            let y = 2.0 * (r as f64 + 0.5) / size as f64 - 1.0;
            let s = shape(drawn, (x - du) / scale, (y - dv) / scale);
            let value = match modality {
                "CT" => s,
                // horizontal banding inside the anatomy
                "MR" => s * (0.7 + 0.3 * (std::f64::consts::TAU * 5.0 * y).sin()) + 0.05,
                // bright background, darker anatomy, lateral gradient
                _ => 0.85 - 0.6 * s + 0.1 * x,
            };
            let v = (value + noise.sample(rng)).clamp(0.0, 1.0);
            out.push((v * 4095.0).round() as u16);
        }
    }
    out
}

const VOCABULARY: [(&str, [&str; 10]); 6] = [
    ("HEAD", ["brain", "cerebral", "ventricles", "skull", "intracranial", "hemorrhage", "midline", "sulci", "cerebellum", "parenchyma"]),
    ("CHEST", ["lungs", "pleural", "effusion", "heart", "mediastinum", "pulmonary", "consolidation", "thorax", "bronchi", "costophrenic"]),
    ("KNEE", ["meniscus", "ligament", "cruciate", "patella", "cartilage", "femoral", "tibial", "knee", "condyle", "popliteal"]),
    ("HAND", ["phalanx", "metacarpal", "fracture", "wrist", "carpal", "finger", "hand", "tendon", "cortex", "thumb"]),
    ("ABDOMEN", ["liver", "spleen", "kidneys", "pancreas", "bowel", "abdominal", "gallbladder", "ascites", "aorta", "nodes"]),
    ("LSPINE", ["lumbar", "vertebral", "disc", "herniation", "canal", "foramina", "sacrum", "facet", "spinal", "lordosis"]),
];

/// Reporting language that depends on the modality rather than the anatomy.
const MODALITY_VOCABULARY: [[&str; 6]; 3] = [
    ["attenuation", "hypodense", "hyperdense", "contrast", "axial", "hounsfield"],
    ["signal", "weighted", "hyperintense", "flair", "sequence", "enhancement"],
    ["radiograph", "projection", "frontal", "opacity", "lucency", "lateral"],
];

const FILLER: [&str; 26] = [
    "no", "acute", "findings", "normal", "compared", "prior", "study", "stable", "appearance", "without", "evidence", "mild",
    "moderate", "seen", "noted", "unremarkable", "follow", "up", "recommended", "left", "right", "bilateral", "small", "size",
    "within", "limits",
];

fn diagnosis_text(modality: &str, body_part: &str, classes: usize, confusion: f64, rng: &mut ChaCha8Rng) -> String {
    let topic = if rng.random_bool(confusion) {
        let parts: Vec<&str> = CLASSES[..classes].iter().map(|c| c.1).filter(|b| *b != body_part).collect();
        parts.choose(rng).copied().unwrap_or(body_part)
    } else {
        body_part
    };
    let vocab = VOCABULARY.iter().find(|(b, _)| *b == topic).map(|(_, v)| v).expect("every body part has a vocabulary");
    let n_topic = rng.random_range(3..=5);
    let n_modality = rng.random_range(1..=3);
    let n_filler = rng.random_range(2..=5);
    let mut words: Vec<&str> = vocab.choose_multiple(rng, n_topic).copied().collect();
    words.extend(MODALITY_VOCABULARY[modality_index(modality)].choose_multiple(rng, n_modality).copied());
    words.extend(FILLER.choose_multiple(rng, n_filler).copied());
    words.shuffle(rng);
    let mut text = words.join(" ");
    text.push('.');
    text
}
