//! Motion sequences: CSV ingestion, root centering, windowing, horizon
//! mapping, synthetic generation and the orthonormal DCT baseline encoding.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::trainer::TrainWindow;

/// `frames × K` joint coordinates (mm) sampled at `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub values: Matrix,
    pub columns: Vec<String>,
    /// Present when the columns come in `<joint>_x, <joint>_y, <joint>_z` triples.
    pub joint_names: Option<Vec<String>>,
}

impl MotionSequence {
    pub fn new(fps: f64, values: Matrix, columns: Vec<String>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if columns.len() != values.cols() {
            return Err(Error::shape(
                "MotionSequence",
                format!("{} columns", values.cols()),
                format!("{} column names", columns.len()),
            ));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("motion values must be finite".into()));
        }
        let joint_names = joint_names_from_columns(&columns);
        Ok(Self {
            fps,
            values,
            columns,
            joint_names,
        })
    }

    /// Uses `<joint>_{x,y,z}` column names for `joints` generic joints.
    pub fn with_generic_names(fps: f64, values: Matrix) -> Result<Self> {
        if !values.cols().is_multiple_of(3) {
            return Err(Error::Config(format!(
                "{} coordinates is not a multiple of 3",
                values.cols()
            )));
        }
        let columns = (0..values.cols() / 3)
            .flat_map(|j| ["x", "y", "z"].map(|a| format!("j{j}_{a}")))
            .collect();
        Self::new(fps, values, columns)
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    /// `K`, the number of coordinates per frame.
    pub fn coords(&self) -> usize {
        self.values.cols()
    }

    pub fn joints(&self) -> usize {
        self.coords() / 3
    }
}

fn joint_names_from_columns(columns: &[String]) -> Option<Vec<String>> {
    if columns.is_empty() || !columns.len().is_multiple_of(3) {
        return None;
    }
    columns
        .chunks(3)
        .map(|c| {
            let joint = c[0].strip_suffix("_x")?;
            (c[1].strip_suffix("_y")? == joint && c[2].strip_suffix("_z")? == joint).then(|| joint.to_string())
        })
        .collect()
}

fn parse_fps_line(line: &str) -> Option<f64> {
    let rest = line.trim().strip_prefix('#')?.trim();
    let value = rest.strip_prefix("fps")?.trim_start().strip_prefix('=')?;
    value.trim().parse().ok()
}

/// Reads the motion CSV format: `# fps=<f>`, a header row, one row per frame.
pub fn load_motion_csv(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion_csv(&text, path)
}

pub fn parse_motion_csv(text: &str, path: &Path) -> Result<MotionSequence> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let fps = parse_fps_line(first).ok_or_else(|| parse_err(1, "missing `# fps=<value>` line".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(rest.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(2, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(parse_err(2, "missing column header row".into()));
    }
    let k = columns.len();
    let mut data = Vec::new();
    let mut frames = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            parse_err(line, e.to_string())
        })?;
        // +1 for the fps line that was split off before the csv reader.
        let line = record.position().map_or(0, |p| p.line() + 1);
        if record.len() != k {
            return Err(parse_err(
                line,
                format!("row has {} values, expected {k}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column `{}`: `{cell}` is not a number", columns[c])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column `{}`: non-finite value", columns[c])));
            }
            data.push(v);
        }
        frames += 1;
    }
    MotionSequence::new(fps, Matrix::new(frames, k, data)?, columns)
}

/// Serializes to the motion CSV format (LF line endings, shortest exact decimals).
pub fn format_motion_csv(seq: &MotionSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# fps={}", seq.fps);
    out.push_str(&seq.columns.join(","));
    out.push('\n');
    for r in 0..seq.frames() {
        for (c, v) in seq.values.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_motion_csv(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_motion_csv(seq)).map_err(|e| Error::io(path, e))
}

/// Subtracts the root joint's position from every joint, frame by frame.
pub fn center_root(seq: &MotionSequence, root_joint: usize) -> Result<MotionSequence> {
    if !seq.coords().is_multiple_of(3) {
        return Err(Error::Config(format!(
            "{} coordinates is not a multiple of 3",
            seq.coords()
        )));
    }
    if root_joint >= seq.joints() {
        return Err(Error::OutOfRange {
            what: "root joint",
            index: root_joint,
            limit: seq.joints(),
        });
    }
    let mut values = seq.values.clone();
    for r in 0..values.rows() {
        let row = values.row_mut(r);
        let root = [row[3 * root_joint], row[3 * root_joint + 1], row[3 * root_joint + 2]];
        for (c, v) in row.iter_mut().enumerate() {
            *v -= root[c % 3];
        }
    }
    Ok(MotionSequence { values, ..seq.clone() })
}

/// Sliding windows starting at `0, stride, 2·stride, …`, transposed to `K × time`.
pub fn make_windows(
    seq: &MotionSequence,
    input_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<TrainWindow>> {
    if input_len == 0 || pred_len == 0 || stride == 0 {
        return Err(Error::Config("input_len, pred_len and stride must be >= 1".into()));
    }
    let span = input_len + pred_len;
    if seq.frames() < span {
        return Err(Error::TooShort {
            required: span,
            actual: seq.frames(),
        });
    }
    let k = seq.coords();
    (0..=seq.frames() - span)
        .step_by(stride)
        .map(|o| {
            let target = Matrix::from_fn(k, span, |r, c| seq.values.get(o + c, r));
            let input = Matrix::from_fn(k, input_len, |r, c| target.get(r, c));
            TrainWindow::new(input, target)
        })
        .collect()
}

/// `round(ms · fps / 1000)`, at least one frame.
pub fn ms_to_frames(ms: f64, fps: f64) -> usize {
    ((ms * fps / 1000.0).round() as usize).max(1)
}

/// Evaluation horizons in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HorizonSet {
    ms: Vec<f64>,
}

impl Default for HorizonSet {
    fn default() -> Self {
        Self {
            ms: vec![80.0, 160.0, 320.0, 400.0, 560.0, 1000.0],
        }
    }
}

impl HorizonSet {
    pub fn new(ms: Vec<f64>) -> Result<Self> {
        let set = Self { ms };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ms.is_empty() {
            return Err(Error::Config("horizon set is empty".into()));
        }
        if self.ms.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("horizons must be > 0 ms".into()));
        }
        if self.ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("horizons must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn ms(&self) -> &[f64] {
        &self.ms
    }

    pub fn frames(&self, fps: f64) -> Vec<usize> {
        self.ms.iter().map(|&m| ms_to_frames(m, fps)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    /// mm
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    pub phase: f64,
}

/// Sum-of-sinusoids motion with optional Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub joints: usize,
    pub fps: f64,
    /// seconds
    pub duration: f64,
    /// One list per coordinate, `3 · joints` lists.
    pub components: Vec<Vec<SineComponent>>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    /// Random multi-sinusoid spec: each coordinate gets `per_coord` components
    /// with frequencies on a 0.25 Hz grid up to 1.5 Hz, amplitudes in
    /// `[20, 150]` mm, and random phases. Deterministic in `seed`.
    pub fn periodic(joints: usize, fps: f64, duration: f64, per_coord: usize, noise_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = (0..3 * joints)
            .map(|_| {
                (0..per_coord)
                    .map(|_| SineComponent {
                        amplitude: rng.gen_range(20.0..150.0),
                        frequency: 0.25 * rng.gen_range(1..=6) as f64,
                        phase: rng.gen_range(0.0..2.0 * PI),
                    })
                    .collect()
            })
            .collect();
        Self {
            joints,
            fps,
            duration,
            components,
            noise_std,
            seed,
        }
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.joints == 0 {
            bad.push("joints must be >= 1".to_string());
        }
        if !(self.fps > 0.0) {
            bad.push(format!("fps must be > 0, got {}", self.fps));
        }
        if !(self.duration > 0.0) {
            bad.push(format!("duration must be > 0, got {}", self.duration));
        }
        if self.components.len() != 3 * self.joints {
            bad.push(format!(
                "need {} component lists (3 per joint), got {}",
                3 * self.joints,
                self.components.len()
            ));
        }
        let nyquist = self.fps / 2.0;
        for (k, list) in self.components.iter().enumerate() {
            for c in list {
                if !(c.frequency >= 0.0 && c.frequency < nyquist) {
                    bad.push(format!(
                        "coordinate {k}: frequency {} Hz not below Nyquist {nyquist} Hz",
                        c.frequency
                    ));
                }
                if !c.amplitude.is_finite() || !c.phase.is_finite() {
                    bad.push(format!("coordinate {k}: non-finite amplitude or phase"));
                }
            }
        }
        if !(self.noise_std >= 0.0) {
            bad.push(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Samples a [`SynthSpec`] at `t = i / fps`.
pub fn synth_motion(spec: &SynthSpec) -> Result<MotionSequence> {
    spec.validate()?;
    let frames = spec.frames();
    let k = 3 * spec.joints;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(frames * k);
    for i in 0..frames {
        let t = i as f64 / spec.fps;
        for list in &spec.components {
            let clean: f64 = list
                .iter()
                .map(|c| c.amplitude * (2.0 * PI * c.frequency * t + c.phase).sin())
                .sum();
            let v = if spec.noise_std > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            data.push(v);
        }
    }
    MotionSequence::with_generic_names(spec.fps, Matrix::new(frames, k, data)?)
}

/// Orthonormal DCT-II.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum();
            dct_scale(k, n) * s
        })
        .collect()
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| dct_scale(k, n) * v * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum()
        })
        .collect()
}

fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Row-wise DCT coefficients of a `K × time` trajectory matrix: the
/// frequency-domain alternative to the TIM embedding.
pub fn dct_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&dct2(x.row(r)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_seq() -> MotionSequence {
        let v = Matrix::from_rows(&[[1.5, -2.0, 3.25], [0.1, 1e-7, 123456.789]]).unwrap();
        MotionSequence::new(25.0, v, vec!["hip_x".into(), "hip_y".into(), "hip_z".into()]).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let seq = tiny_seq();
        assert_eq!(seq.joint_names, Some(vec!["hip".to_string()]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        save_motion_csv(&seq, &p).unwrap();
        let back = load_motion_csv(&p).unwrap();
        assert_eq!(back, seq);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# fps=25\nhip_x,hip_y,hip_z\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let p = Path::new("x.csv");
        let err = parse_motion_csv("# fps=25\na_x,a_y,a_z\n1,2,3\n1,2,3,4\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = parse_motion_csv("# fps=25\na_x,a_y,a_z\n1,zz,3\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_motion_csv("a_x,a_y,a_z\n1,2,3\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn non_triplet_columns_have_no_joint_names() {
        let seq = parse_motion_csv("# fps=30\na,b\n1,2\n", Path::new("y.csv")).unwrap();
        assert_eq!(seq.joint_names, None);
        assert_eq!(seq.fps, 30.0);
    }

    #[test]
    fn synthetic_export_reloads() {
        let spec = SynthSpec::periodic(2, 25.0, 4.0, 2, 1.0, 5);
        let seq = synth_motion(&spec).unwrap();
        assert_eq!(seq.frames(), 100);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        save_motion_csv(&seq, &p).unwrap();
        assert_eq!(load_motion_csv(&p).unwrap().values, seq.values);
    }

    #[test]
    fn center_root_properties() {
        let seq = synth_motion(&SynthSpec::periodic(3, 25.0, 2.0, 2, 0.5, 1)).unwrap();
        let c = center_root(&seq, 1).unwrap();
        for r in 0..c.frames() {
            assert_eq!(&c.values.row(r)[3..6], &[0.0, 0.0, 0.0]);
            for d in 0..3 {
                let before = seq.values.get(r, d) - seq.values.get(r, 6 + d);
                let after = c.values.get(r, d) - c.values.get(r, 6 + d);
                assert!((before - after).abs() < 1e-9);
            }
        }
        assert_eq!(center_root(&c, 1).unwrap(), c);
        assert!(center_root(&seq, 3).is_err());
    }

    #[test]
    fn window_counts() {
        let seq = synth_motion(&SynthSpec::periodic(1, 25.0, 1.0, 1, 0.0, 2)).unwrap();
        let f = seq.frames();
        assert_eq!(make_windows(&seq, 10, f - 10, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&seq, 10, f - 11, 1).unwrap().len(), 2);
        assert!(matches!(
            make_windows(&seq, 10, f - 9, 1),
            Err(Error::TooShort { required, .. }) if required == f + 1
        ));
        let w = &make_windows(&seq, 4, 3, 5).unwrap()[1];
        assert_eq!(w.input.shape(), (3, 4));
        assert_eq!(w.target.get(2, 6), seq.values.get(5 + 6, 2));
    }

    #[test]
    fn horizon_mapping() {
        assert_eq!(ms_to_frames(80.0, 25.0), 2);
        assert_eq!(ms_to_frames(1000.0, 25.0), 25);
        assert_eq!(ms_to_frames(40.0, 25.0), 1);
        assert_eq!(ms_to_frames(10.0, 25.0), 1);
        assert_eq!(HorizonSet::default().frames(25.0), vec![2, 4, 8, 10, 14, 25]);
        assert!(HorizonSet::new(vec![80.0, 80.0]).is_err());
        assert!(HorizonSet::new(vec![-1.0]).is_err());
    }

    #[test]
    fn synth_examples() {
        let spec = SynthSpec {
            joints: 1,
            fps: 25.0,
            duration: 2.0,
            components: vec![
                vec![SineComponent {
                    amplitude: 50.0,
                    frequency: 1.0,
                    phase: 0.0
                }];
                3
            ],
            noise_std: 0.0,
            seed: 0,
        };
        let seq = synth_motion(&spec).unwrap();
        assert_eq!(seq.values.row(0), &[0.0, 0.0, 0.0]);
        let noisy = SynthSpec::periodic(2, 25.0, 3.0, 3, 2.0, 77);
        assert_eq!(synth_motion(&noisy).unwrap(), synth_motion(&noisy).unwrap());
        let mut bad = spec.clone();
        bad.components[0][0].frequency = 12.5;
        bad.noise_std = -1.0;
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("Nyquist") && msg.contains("noise_std"), "{msg}");
    }

    #[test]
    fn synth_amplitude_bound() {
        let spec = SynthSpec::periodic(2, 25.0, 400.0, 3, 1.5, 9);
        let seq = synth_motion(&spec).unwrap();
        assert_eq!(seq.frames(), 10_000);
        for (k, list) in spec.components.iter().enumerate() {
            let bound: f64 = list.iter().map(|c| c.amplitude).sum::<f64>() + 6.0 * spec.noise_std;
            let worst = seq.values.col(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= bound, "coord {k}: {worst} > {bound}");
        }
    }

    #[test]
    fn noiseless_synth_is_periodic() {
        // Grid frequencies are multiples of 0.25 Hz: common period 4 s = 100 frames.
        let spec = SynthSpec::periodic(2, 25.0, 12.0, 3, 0.0, 4);
        let seq = synth_motion(&spec).unwrap();
        for r in 0..seq.frames() - 100 {
            for c in 0..seq.coords() {
                assert!((seq.values.get(r, c) - seq.values.get(r + 100, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dct_examples() {
        let c = dct2(&[3.0; 8]);
        assert!((c[0] - 3.0 * 8f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
        let c = dct2(&[1.0, 0.0]);
        // closed form: c0 = 1/√2, c1 = √(2/2)·cos(π/4)
        assert!((c[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((c[1] - (PI / 4.0).cos()).abs() < 1e-15);
        assert!((c[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn dct_rows_matches_dct2() {
        let x = Matrix::from_fn(2, 5, |r, c| (r * 5 + c) as f64);
        let d = dct_rows(&x);
        assert_eq!(d.row(1), dct2(x.row(1)).as_slice());
    }

    proptest! {
        #[test]
        fn dct_round_trip_and_parseval(x in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let c = dct2(&x);
            let back = idct(&c);
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = c.iter().map(|v| v * v).sum();
            prop_assert!((ex.sqrt() - ec.sqrt()).abs() < 1e-9);
        }

        #[test]
        fn window_count_matches_enumeration(frames in 1usize..80, m in 1usize..12, t in 1usize..12, stride in 1usize..6) {
            let seq = MotionSequence::with_generic_names(25.0, Matrix::from_fn(frames, 3, |r, c| (r * 3 + c) as f64)).unwrap();
            let mut expected = 0;
            let mut o = 0;
            while o + m + t <= frames {
                expected += 1;
                o += stride;
            }
            match make_windows(&seq, m, t, stride) {
                Ok(ws) => {
                    prop_assert_eq!(ws.len(), expected);
                    for w in &ws {
                        for r in 0..3 {
                            prop_assert_eq!(w.input.row(r), &w.target.row(r)[..m]);
                        }
                    }
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }

        #[test]
        fn csv_round_trip_random(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 6), 1..20)) {
            let seq = MotionSequence::with_generic_names(50.0, Matrix::from_rows(&rows).unwrap()).unwrap();
            let back = parse_motion_csv(&format_motion_csv(&seq), Path::new("mem")).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
