//! Detectors as black boxes.
//!
//! A detector maps an image to a list of [`Detection`]s. External detectors
//! are child processes speaking the line-delimited JSON protocol `spx/1`;
//! synthetic detectors read the presence vector directly and have
//! analytically known outputs, which is what the estimators are validated
//! against.

use std::fmt;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use image::ImageFormat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::Image;
use crate::quality::BBox;

pub const PROTOCOL_VERSION: &str = "spx/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub label: String,
}

pub mod protocol {
    //! Wire messages of `spx/1`.

    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Handshake {
        pub protocol: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Request {
        pub id: u64,
        pub image_png_b64: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Response {
        pub id: u64,
        #[serde(default)]
        pub detections: Vec<Detection>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub error: Option<String>,
    }

    pub fn encode_request(id: u64, image: &Image) -> Result<String> {
        let mut png = Vec::new();
        image.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)?;
        let req = Request {
            id,
            image_png_b64: base64::engine::general_purpose::STANDARD.encode(png),
        };
        Ok(serde_json::to_string(&req)?)
    }

    pub fn decode_request_image(req: &Request) -> Result<Image> {
        let png = base64::engine::general_purpose::STANDARD
            .decode(&req.image_png_b64)
            .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
        Ok(image::load_from_memory_with_format(&png, ImageFormat::Png)?.to_rgb8())
    }

    pub fn encode_response(resp: &Response) -> Result<String> {
        Ok(serde_json::to_string(resp)?)
    }

    /// Parses and validates one response line.
    pub fn parse_response(line: &str) -> Result<Response> {
        let resp: Response = serde_json::from_str(line.trim())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if let Some(err) = &resp.error {
            return Err(Error::Protocol(format!("detector reported: {err}")));
        }
        if let Some(d) = resp.detections.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
            return Err(Error::Protocol(format!("score {} outside [0, 1]", d.score)));
        }
        Ok(resp)
    }

    /// Major version of a `spx/<major>[.<minor>]` string.
    pub fn major_version(version: &str) -> Option<u32> {
        version
            .strip_prefix("spx/")?
            .split('.')
            .next()?
            .parse()
            .ok()
    }
}

/// One term `coef * prod(presence[i] for i in parts)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTerm {
    pub coef: f64,
    pub parts: Vec<usize>,
}

/// Closed-form detection quality over presence vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticForm {
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    Product {
        terms: Vec<ProductTerm>,
        #[serde(default)]
        bias: f64,
    },
}

impl SyntheticForm {
    /// Smallest presence length the form accepts.
    pub fn min_parts(&self) -> usize {
        match self {
            SyntheticForm::Linear { weights, .. } => weights.len(),
            SyntheticForm::Product { terms, .. } => terms
                .iter()
                .flat_map(|t| t.parts.iter().map(|p| p + 1))
                .max()
                .unwrap_or(0),
        }
    }

    /// Value before clamping.
    pub fn raw_value(&self, presence: &[f64]) -> Result<f64> {
        match self {
            SyntheticForm::Linear { weights, bias } => {
                if presence.len() != weights.len() {
                    return Err(Error::LengthMismatch {
                        expected: weights.len(),
                        got: presence.len(),
                    });
                }
                Ok(bias + weights.iter().zip(presence).map(|(w, p)| w * p).sum::<f64>())
            }
            SyntheticForm::Product { terms, bias } => {
                if presence.len() < self.min_parts() {
                    return Err(Error::LengthMismatch {
                        expected: self.min_parts(),
                        got: presence.len(),
                    });
                }
                Ok(bias
                    + terms
                        .iter()
                        .map(|t| t.coef * t.parts.iter().map(|&i| presence[i]).product::<f64>())
                        .sum::<f64>())
            }
        }
    }

    /// The detection score: the raw value clamped to `[0, 1]`.
    pub fn value(&self, presence: &[f64]) -> Result<f64> {
        Ok(self.raw_value(presence)?.clamp(0.0, 1.0))
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::DetectorSpec(format!("bad number {t:?}")))
        })
        .collect()
}

impl FromStr for SyntheticForm {
    type Err = Error;

    /// Accepts JSON, `linear:<w1>,<w2>,...[;b=<bias>]` or
    /// `product:<coef>@<i>-<j>-...;...[;b=<bias>]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::DetectorSpec(e.to_string()));
        }
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::DetectorSpec(format!("expected <kind>:<params>, got {s:?}")))?;
        let mut bias = 0.0;
        let mut fields = Vec::new();
        for field in body.split(';').map(str::trim).filter(|f| !f.is_empty()) {
            match field.strip_prefix("b=") {
                Some(b) => {
                    bias = b
                        .parse()
                        .map_err(|_| Error::DetectorSpec(format!("bad bias {b:?}")))?
                }
                None => fields.push(field),
            }
        }
        match kind {
            "linear" => {
                let weights = fields
                    .iter()
                    .map(|f| parse_floats(f))
                    .collect::<Result<Vec<_>>>()?
                    .concat();
                if weights.is_empty() {
                    return Err(Error::DetectorSpec("linear form needs weights".into()));
                }
                Ok(SyntheticForm::Linear { weights, bias })
            }
            "product" => {
                let terms = fields
                    .iter()
                    .map(|f| {
                        let (coef, parts) = f.split_once('@').ok_or_else(|| {
                            Error::DetectorSpec(format!("product term {f:?} lacks '@'"))
                        })?;
                        let coef = if coef.is_empty() {
                            1.0
                        } else {
                            coef.parse()
                                .map_err(|_| Error::DetectorSpec(format!("bad coefficient {coef:?}")))?
                        };
                        let parts = parts
                            .split('-')
                            .filter(|p| !p.is_empty())
                            .map(|p| {
                                p.parse()
                                    .map_err(|_| Error::DetectorSpec(format!("bad part index {p:?}")))
                            })
                            .collect::<Result<Vec<usize>>>()?;
                        Ok(ProductTerm { coef, parts })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SyntheticForm::Product { terms, bias })
            }
            other => Err(Error::DetectorSpec(format!("unknown synthetic form {other:?}"))),
        }
    }
}

/// How to obtain a detector for one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    External {
        program: String,
        args: Vec<String>,
        timeout: Duration,
    },
    Synthetic(SyntheticForm),
    /// Reports the ground-truth box with the mean brightness inside it.
    PixelMean,
}

impl DetectorSpec {
    pub fn external(command: &str, timeout: Duration) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::DetectorSpec("empty detector command".into()))?;
        Ok(DetectorSpec::External {
            program,
            args: parts.collect(),
            timeout,
        })
    }

    /// Whether the detector looks at pixels at all.
    pub fn needs_image(&self) -> bool {
        !matches!(self, DetectorSpec::Synthetic(_))
    }

    /// Creates a handle bound to the instance's ground-truth box. External
    /// detectors are spawned and handshaken here.
    pub fn open(&self, gt: BBox) -> Result<DetectorHandle> {
        Ok(match self {
            DetectorSpec::External {
                program,
                args,
                timeout,
            } => DetectorHandle::External(ExternalDetector::spawn(program, args, *timeout)?),
            DetectorSpec::Synthetic(form) => DetectorHandle::Synthetic(SyntheticDetector {
                form: form.clone(),
                gt_bbox: gt,
            }),
            DetectorSpec::PixelMean => DetectorHandle::PixelMean(PixelMeanDetector { gt_bbox: gt }),
        })
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorSpec::External { program, args, .. } => {
                write!(f, "{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            DetectorSpec::Synthetic(form) => write!(
                f,
                "synthetic:{}",
                serde_json::to_string(form).map_err(|_| fmt::Error)?
            ),
            DetectorSpec::PixelMean => f.write_str("synthetic:pixel-mean"),
        }
    }
}

impl FromStr for DetectorSpec {
    type Err = Error;

    /// `synthetic:<form>`, `synthetic:pixel-mean`, or a command line.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().strip_prefix("synthetic:") {
            Some("pixel-mean") => Ok(DetectorSpec::PixelMean),
            Some(form) => Ok(DetectorSpec::Synthetic(form.parse()?)),
            None => DetectorSpec::external(s, DEFAULT_TIMEOUT),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDetector {
    pub form: SyntheticForm,
    pub gt_bbox: BBox,
}

impl SyntheticDetector {
    pub fn detect(&self, presence: &[f64]) -> Result<Vec<Detection>> {
        Ok(vec![Detection {
            bbox: self.gt_bbox,
            score: self.form.value(presence)?,
            label: "person".into(),
        }])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelMeanDetector {
    pub gt_bbox: BBox,
}

impl PixelMeanDetector {
    /// Mean channel brightness over pixels whose centres lie in the box, in `[0, 1]`.
    pub fn brightness(&self, image: &Image) -> f64 {
        let b = &self.gt_bbox;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (x, y, px) in image.enumerate_pixels() {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2 {
                sum += px.0.iter().map(|&c| c as f64).sum::<f64>() / 3.0;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / (n as f64 * 255.0)
        }
    }

    pub fn detect(&self, image: &Image) -> Vec<Detection> {
        vec![Detection {
            bbox: self.gt_bbox,
            score: self.brightness(image),
            label: "person".into(),
        }]
    }
}

/// A child process speaking `spx/1`.
pub struct ExternalDetector {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    next_id: u64,
    version: String,
}

impl fmt::Debug for ExternalDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalDetector")
            .field("pid", &self.child.id())
            .field("version", &self.version)
            .finish()
    }
}

impl ExternalDetector {
    /// Spawns the process and completes the handshake.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::DetectorCrash(format!("could not start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut det = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            next_id: 0,
            version: String::new(),
        };
        det.version = det.handshake()?;
        Ok(det)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn read_line(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .wait()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|e| e.to_string());
                Err(Error::DetectorCrash(status))
            }
        }
    }

    fn handshake(&mut self) -> Result<String> {
        let line = self.read_line()?;
        let hs: protocol::Handshake = serde_json::from_str(line.trim())
            .map_err(|e| Error::Protocol(format!("bad handshake {line:?}: {e}")))?;
        let expected = protocol::major_version(PROTOCOL_VERSION);
        if protocol::major_version(&hs.protocol) != expected {
            return Err(Error::VersionMismatch {
                expected: PROTOCOL_VERSION.into(),
                got: hs.protocol,
            });
        }
        Ok(hs.protocol)
    }

    pub fn detect(&mut self, image: &Image) -> Result<Vec<Detection>> {
        let id = self.next_id;
        self.next_id += 1;
        let line = protocol::encode_request(id, image)?;
        let write = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush());
        if let Err(e) = write {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(Error::DetectorCrash(e.to_string()));
            }
            return Err(e.into());
        }
        let resp = protocol::parse_response(&self.read_line()?)?;
        if resp.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        Ok(resp.detections)
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug)]
pub enum DetectorHandle {
    External(ExternalDetector),
    Synthetic(SyntheticDetector),
    PixelMean(PixelMeanDetector),
}

impl DetectorHandle {
    /// Runs the detector. `presence` is the side channel read by synthetic
    /// detectors; the others only look at `image`.
    pub fn detect(&mut self, image: &Image, presence: &[f64]) -> Result<Vec<Detection>> {
        match self {
            DetectorHandle::External(d) => d.detect(image),
            DetectorHandle::Synthetic(d) => d.detect(presence),
            DetectorHandle::PixelMean(d) => Ok(d.detect(image)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt() -> BBox {
        BBox::new(1.0, 1.0, 5.0, 9.0).unwrap()
    }

    #[test]
    fn linear_score_is_clamped_affine() {
        let form: SyntheticForm = "linear:0.3,0.7;b=0.1".parse().unwrap();
        assert_eq!(
            form,
            SyntheticForm::Linear {
                weights: vec![0.3, 0.7],
                bias: 0.1
            }
        );
        let det = SyntheticDetector { form, gt_bbox: gt() };
        let out = det.detect(&[1.0, 0.5]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, gt());
        assert!((out[0].score - 0.75).abs() < 1e-15);
        assert_eq!(det.detect(&[1.0, 1.0]).unwrap()[0].score, 1.0);
        assert!(matches!(det.detect(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn product_form_parses() {
        let form: SyntheticForm = "product:0.5@0-1;@2;b=0.05".parse().unwrap();
        assert_eq!(form.min_parts(), 3);
        assert!((form.value(&[1.0, 0.5, 0.2]).unwrap() - (0.25 + 0.2 + 0.05)).abs() < 1e-15);
        let json = serde_json::to_string(&form).unwrap();
        assert_eq!(json.parse::<SyntheticForm>().unwrap(), form);
    }

    #[test]
    fn bad_specs_rejected() {
        for s in ["linear:", "quadratic:1", "product:0.5", "linear:a,b", "nonsense"] {
            assert!(s.parse::<SyntheticForm>().is_err(), "{s}");
        }
    }

    #[test]
    fn detector_spec_parsing() {
        assert_eq!("synthetic:pixel-mean".parse::<DetectorSpec>().unwrap(), DetectorSpec::PixelMean);
        let ext: DetectorSpec = "python3 adapter.py --model heuristic".parse().unwrap();
        match &ext {
            DetectorSpec::External { program, args, timeout } => {
                assert_eq!(program, "python3");
                assert_eq!(args.len(), 3);
                assert_eq!(*timeout, DEFAULT_TIMEOUT);
            }
            other => panic!("{other:?}"),
        }
        let syn: DetectorSpec = "synthetic:linear:1,2".parse().unwrap();
        assert_eq!(syn.to_string().parse::<DetectorSpec>().unwrap(), syn);
    }

    #[test]
    fn pixel_mean_reads_inside_box() {
        let mut img = Image::new(10, 10);
        for y in 1..9 {
            for x in 1..5 {
                img.put_pixel(x, y, image::Rgb([255, 255, 255]));
            }
        }
        let det = PixelMeanDetector { gt_bbox: gt() };
        assert_eq!(det.brightness(&img), 1.0);
        assert_eq!(det.brightness(&Image::new(10, 10)), 0.0);
    }

    #[test]
    fn version_parsing() {
        assert_eq!(protocol::major_version("spx/1"), Some(1));
        assert_eq!(protocol::major_version("spx/1.3"), Some(1));
        assert_eq!(protocol::major_version("spx/2"), Some(2));
        assert_eq!(protocol::major_version("xyz/1"), None);
    }

    #[test]
    fn response_validation() {
        assert!(matches!(protocol::parse_response("not json"), Err(Error::Protocol(_))));
        let bad_score = r#"{"id":0,"detections":[{"bbox":[0,0,1,1],"score":1.5,"label":"p"}]}"#;
        assert!(matches!(protocol::parse_response(bad_score), Err(Error::Protocol(_))));
        let bad_box = r#"{"id":0,"detections":[{"bbox":[2,0,1,1],"score":0.5,"label":"p"}]}"#;
        assert!(matches!(protocol::parse_response(bad_box), Err(Error::Protocol(_))));
        let err = r#"{"id":0,"error":"boom"}"#;
        assert!(matches!(protocol::parse_response(err), Err(Error::Protocol(_))));
        let empty = protocol::parse_response(r#"{"id":4,"detections":[]}"#).unwrap();
        assert_eq!(empty.id, 4);
    }

    #[test]
    fn request_carries_png() {
        let img = Image::from_pixel(3, 2, image::Rgb([1, 2, 3]));
        let line = protocol::encode_request(7, &img).unwrap();
        let req: protocol::Request = serde_json::from_str(&line).unwrap();
        assert_eq!(req.id, 7);
        assert_eq!(protocol::decode_request_image(&req).unwrap(), img);
    }

    proptest! {
        #[test]
        fn wire_round_trip(
            id in any::<u64>(),
            dets in proptest::collection::vec(
                (0.0..100.0f64, 0.0..100.0f64, 0.01..50.0f64, 0.01..50.0f64, 0.0..=1.0f64, "[a-z]{0,8}"),
                0..5,
            )
        ) {
            let detections: Vec<Detection> = dets
                .into_iter()
                .map(|(x, y, w, h, score, label)| Detection {
                    bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                    score,
                    label,
                })
                .collect();
            let resp = protocol::Response { id, detections, error: None };
            let back = protocol::parse_response(&protocol::encode_response(&resp).unwrap()).unwrap();
            prop_assert_eq!(back, resp);
        }

        #[test]
        fn linear_matches_formula(w in proptest::collection::vec(-1.0..1.0f64, 1..8), b in -0.5..0.5f64, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let p: Vec<f64> = w.iter().map(|_| rng.random::<f64>()).collect();
            let form = SyntheticForm::Linear { weights: w.clone(), bias: b };
            let want = (b + w.iter().zip(&p).map(|(a, c)| a * c).sum::<f64>()).clamp(0.0, 1.0);
            prop_assert_eq!(form.value(&p).unwrap(), want);
        }
    }
}
