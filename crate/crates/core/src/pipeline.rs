//! Streaming inference: monitor the foot-to-ball ratio frame by frame,
//! trigger at the threshold, assemble the 8-frame input and predict.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::model::{batch_inputs, Model};
use crate::segmentation::{
    frame_ratio, gather_inputs, reference_distance, select_frames, RatioEntry, RepairedIndices, ThresholdConfig,
};
use crate::synthgen::{generate_scenario, ScenarioParams};
use crate::types::{DirectionLabel, FrameRecord, KickSample, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Waiting,
    Monitoring,
    Triggered,
    Predicted,
}

/// Consumer-side state of one kick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineState {
    pub phase: Phase,
    pub reference_distance: Option<f64>,
    pub buffer: Vec<FrameRecord>,
    pub trace: Vec<RatioEntry>,
    /// Buffer position of the triggering frame.
    pub endpoint: Option<usize>,
}

impl Default for PipelineState {
    fn default() -> Self {
        Self::new()
    }
}

impl PipelineState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Waiting,
            reference_distance: None,
            buffer: Vec::new(),
            trace: Vec::new(),
            endpoint: None,
        }
    }

    /// Buffers `record` and advances the phase. Returns the endpoint position
    /// when this record triggers. Records after the trigger are ignored.
    pub fn observe(&mut self, record: FrameRecord, cfg: &ThresholdConfig) -> Result<Option<usize>> {
        if self.phase >= Phase::Triggered {
            return Ok(None);
        }
        if let Some(last) = self.buffer.last() {
            if record.frame_index <= last.frame_index {
                return Err(Error::StreamOrder {
                    previous: last.frame_index,
                    got: record.frame_index,
                });
            }
        }
        if self.phase == Phase::Waiting {
            if let (Some(ball), Some(net)) = (record.detection(ObjectClass::Ball), record.detection(ObjectClass::Net)) {
                self.reference_distance = Some(reference_distance(&ball.bbox, &net.bbox)?);
                self.phase = Phase::Monitoring;
            }
        }
        let ratio = match self.reference_distance {
            Some(r) if self.phase == Phase::Monitoring => frame_ratio(&record, r)?,
            _ => None,
        };
        self.trace.push(RatioEntry {
            frame_index: record.frame_index,
            ratio,
        });
        self.buffer.push(record);
        if ratio.is_some_and(|r| r <= cfg.ratio) {
            let endpoint = self.buffer.len() - 1;
            self.endpoint = Some(endpoint);
            self.phase = Phase::Triggered;
            return Ok(Some(endpoint));
        }
        Ok(None)
    }
}

/// Model-ready input for one triggered kick.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledInputs {
    pub sample: KickSample,
    pub endpoint: usize,
    pub endpoint_frame: u64,
    pub sampled: Vec<usize>,
    pub repaired: RepairedIndices,
    pub assembly_ms: f64,
}

/// Sampling, repair and normalisation over the buffered segment; identical
/// to the offline segmentation path on the same frames.
pub fn assemble_inputs(
    state: &PipelineState,
    cfg: &ThresholdConfig,
    source: &dyn FrameSource,
    raster_hw: (u32, u32),
) -> Result<AssembledInputs> {
    let start = Instant::now();
    let endpoint = match (state.phase, state.endpoint) {
        (Phase::Triggered | Phase::Predicted, Some(e)) => e,
        _ => return Err(Error::Input(format!("pipeline is {:?}, not triggered", state.phase))),
    };
    let (sampled, repaired) = select_frames(&state.buffer, endpoint, cfg)?;
    let (frames, keypoints) = gather_inputs(&state.buffer, &repaired.indices, source, raster_hw)?;
    let sample = KickSample {
        sample_id: "live".into(),
        label: DirectionLabel::Middle,
        frames,
        keypoints,
    };
    Ok(AssembledInputs {
        sample,
        endpoint,
        endpoint_frame: state.buffer[endpoint].frame_index,
        sampled,
        repaired,
        assembly_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub left: f64,
    pub middle: f64,
    pub right: f64,
}

impl Probabilities {
    pub fn as_array(&self) -> [f64; 3] {
        [self.left, self.middle, self.right]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub probs: Probabilities,
    pub argmax: DirectionLabel,
    /// Frame index of the triggering frame.
    pub endpoint: u64,
    /// Segment positions used after repair.
    pub indices: Vec<usize>,
    pub repairs: Vec<crate::segmentation::Repair>,
    /// Wall-clock of assembly plus forward pass.
    pub latency_ms: f64,
}

/// Runs the model on one assembled sample and reports assembly+forward latency.
pub fn predict_with_latency(model: &Model, inputs: &AssembledInputs) -> Result<PredictionResult> {
    let start = Instant::now();
    let (frames, kps) = batch_inputs(&[&inputs.sample]);
    let out = model.forward(frames.view(), kps.view())?;
    let forward_ms = start.elapsed().as_secs_f64() * 1e3;
    let row = out.probs.row(0);
    let probs = Probabilities {
        left: row[0],
        middle: row[1],
        right: row[2],
    };
    let best = (0..3).fold(0, |b, i| if row[i] > row[b] { i } else { b });
    // Timer resolution can round a sub-microsecond span to zero.
    let latency_ms = (inputs.assembly_ms + forward_ms).max(f64::MIN_POSITIVE);
    Ok(PredictionResult {
        probs,
        argmax: DirectionLabel::from_index(best).expect("three classes"),
        endpoint: inputs.endpoint_frame,
        indices: inputs.repaired.indices.clone(),
        repairs: inputs.repaired.repairs.clone(),
        latency_ms,
    })
}

/// State machine plus the model and raster source needed to predict.
pub struct Pipeline<'a> {
    pub state: PipelineState,
    cfg: ThresholdConfig,
    model: &'a Model,
    source: &'a dyn FrameSource,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a Model, source: &'a dyn FrameSource, cfg: ThresholdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            state: PipelineState::new(),
            cfg,
            model,
            source,
        })
    }

    /// Feeds one record; returns the prediction on the triggering frame.
    pub fn step(&mut self, record: FrameRecord) -> Result<Option<PredictionResult>> {
        if self.state.observe(record, &self.cfg)?.is_none() {
            return Ok(None);
        }
        let (h, w) = self.model.config.input_hw;
        let inputs = assemble_inputs(&self.state, &self.cfg, self.source, (h as u32, w as u32))?;
        let result = predict_with_latency(self.model, &inputs)?;
        self.state.phase = Phase::Predicted;
        Ok(Some(result))
    }

    /// Drains `records` until the first prediction or the end of the stream.
    pub fn run<I>(&mut self, records: I) -> Result<Option<PredictionResult>>
    where
        I: IntoIterator<Item = Result<FrameRecord>>,
    {
        for r in records {
            if let Some(p) = self.step(r?)? {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }
}

fn parse_record(text: &str, ordinal: usize, origin: &str) -> Result<FrameRecord> {
    serde_json::from_str(text).map_err(|e| Error::ProviderParse {
        frame: ordinal,
        message: format!("{origin}: {e}"),
    })
}

/// Replays a JSONL stream, one record per non-empty line.
pub struct JsonlReplay {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    ordinal: usize,
    failed: bool,
}

impl JsonlReplay {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
            ordinal: 0,
            failed: false,
        })
    }
}

impl Iterator for JsonlReplay {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let origin = format!("{} line {}", self.path.display(), self.line_no);
            let r = parse_record(&line, self.ordinal, &origin);
            self.ordinal += 1;
            self.failed = r.is_err();
            return Some(r);
        }
    }
}

/// Replays a directory of per-frame JSON files in file-name order.
pub struct DirectoryReplay {
    files: std::vec::IntoIter<PathBuf>,
    ordinal: usize,
    failed: bool,
}

impl DirectoryReplay {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        Ok(Self {
            files: files.into_iter(),
            ordinal: 0,
            failed: false,
        })
    }
}

impl Iterator for DirectoryReplay {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let path = self.files.next()?;
        let r = fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|t| parse_record(&t, self.ordinal, &path.display().to_string()));
        self.ordinal += 1;
        self.failed = r.is_err();
        Some(r)
    }
}

/// Opens a JSONL file or a directory of per-frame JSON files.
pub fn open_stream(path: &Path) -> Result<Box<dyn Iterator<Item = Result<FrameRecord>>>> {
    if path.is_dir() {
        Ok(Box::new(DirectoryReplay::open(path)?))
    } else {
        Ok(Box::new(JsonlReplay::open(path)?))
    }
}

/// Generates a scenario and yields its records one at a time.
pub struct SyntheticLive {
    records: std::vec::IntoIter<FrameRecord>,
}

impl SyntheticLive {
    pub fn new(params: &ScenarioParams) -> Result<Self> {
        Ok(Self {
            records: generate_scenario(params)?.stream.into_iter(),
        })
    }
}

impl Iterator for SyntheticLive {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.records.next().map(Ok)
    }
}

/// Reads a whole JSONL stream.
pub fn read_stream(path: &Path) -> Result<Vec<FrameRecord>> {
    open_stream(path)?.collect()
}

/// Writes records as JSONL.
pub fn write_stream(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serialises");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelVariant};
    use crate::render::RecordRenderer;
    use crate::segmentation::{build_sample, find_endpoint, RatioTrace};
    use proptest::prelude::*;

    fn scenario(seed: u64) -> crate::synthgen::Scenario {
        generate_scenario(&ScenarioParams::new(
            DirectionLabel::from_index((seed % 3) as usize).unwrap(),
            seed,
        ))
        .unwrap()
    }

    #[test]
    fn online_matches_offline() {
        let model = Model::new(ModelConfig::toy(ModelVariant::Full, 1)).unwrap();
        let renderer = RecordRenderer::default();
        let cfg = ThresholdConfig::new(0.15).unwrap();
        for seed in 0..5 {
            let sc = scenario(seed);
            let offline = build_sample(&sc.stream, &cfg, sc.label, "x", &renderer, (64, 64)).unwrap();
            let (f, k) = batch_inputs(&[&offline.sample]);
            let expected = model.forward(f.view(), k.view()).unwrap().probs;
            let mut p = Pipeline::new(&model, &renderer, cfg).unwrap();
            let result = p.run(SyntheticLive::new(&sc.params).unwrap()).unwrap().unwrap();
            assert_eq!(
                result.probs.as_array(),
                [expected[[0, 0]], expected[[0, 1]], expected[[0, 2]]]
            );
            assert_eq!(result.endpoint, sc.stream[offline.endpoint].frame_index);
            assert_eq!(result.indices, offline.repaired.indices);
            assert!(result.latency_ms > 0.0 && result.latency_ms.is_finite());
            assert_eq!(p.state.phase, Phase::Predicted);
        }
    }

    #[test]
    fn never_triggering_stream_stays_monitoring() {
        let sc = scenario(3);
        let cfg = ThresholdConfig::new(0.001).unwrap();
        let mut st = PipelineState::new();
        for r in sc.stream {
            assert_eq!(st.observe(r, &cfg).unwrap(), None);
        }
        assert_eq!(st.phase, Phase::Monitoring);
    }

    #[test]
    fn predicted_is_absorbing_and_order_is_checked() {
        let model = Model::new(ModelConfig::toy(ModelVariant::PoseOnly, 1)).unwrap();
        let renderer = RecordRenderer::default();
        let cfg = ThresholdConfig::new(0.15).unwrap();
        let sc = scenario(4);
        let mut p = Pipeline::new(&model, &renderer, cfg).unwrap();
        let mut iter = sc.stream.clone().into_iter();
        let mut got = None;
        for r in iter.by_ref() {
            if let Some(res) = p.step(r).unwrap() {
                got = Some(res);
                break;
            }
        }
        assert!(got.is_some());
        let before = p.state.clone();
        assert_eq!(p.step(sc.stream[0].clone()).unwrap(), None);
        assert_eq!(p.state, before);

        let mut st = PipelineState::new();
        st.observe(sc.stream[5].clone(), &cfg).unwrap();
        let err = st.observe(sc.stream[2].clone(), &cfg).unwrap_err();
        assert_eq!(err.class_name(), "StreamOrderError");
    }

    #[test]
    fn short_buffer_at_trigger_is_reported() {
        let sc = scenario(5);
        let cfg = ThresholdConfig::new(0.15).unwrap();
        let offline = ratio_trace_endpoint(&sc.stream, &cfg);
        let tail: Vec<FrameRecord> = sc.stream[offline - 3..].to_vec();
        let model = Model::new(ModelConfig::toy(ModelVariant::PoseOnly, 1)).unwrap();
        let renderer = RecordRenderer::default();
        let mut p = Pipeline::new(&model, &renderer, cfg).unwrap();
        let err = p.run(tail.into_iter().map(Ok)).unwrap_err();
        assert_eq!(err.class_name(), "SequenceTooShort");
    }

    fn ratio_trace_endpoint(stream: &[FrameRecord], cfg: &ThresholdConfig) -> usize {
        let trace: RatioTrace = crate::segmentation::ratio_trace(stream).unwrap();
        find_endpoint(&trace, cfg).unwrap()
    }

    #[test]
    fn replay_round_trips_and_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(6);
        let path = dir.path().join("stream.jsonl");
        write_stream(&path, &sc.stream).unwrap();
        assert_eq!(read_stream(&path).unwrap(), sc.stream);

        let text = fs::read_to_string(&path).unwrap();
        let cut = text.len() - text.lines().last().unwrap().len() / 2 - 1;
        let trunc = dir.path().join("trunc.jsonl");
        fs::write(&trunc, &text[..cut]).unwrap();
        let err = read_stream(&trunc).unwrap_err();
        match err {
            Error::ProviderParse { frame, .. } => assert_eq!(frame, sc.stream.len() - 1),
            other => panic!("unexpected {other:?}"),
        }

        let frames_dir = dir.path().join("frames");
        fs::create_dir(&frames_dir).unwrap();
        for r in &sc.stream[..10] {
            fs::write(
                frames_dir.join(format!("{:06}.json", r.frame_index)),
                serde_json::to_string(r).unwrap(),
            )
            .unwrap();
        }
        assert_eq!(read_stream(&frames_dir).unwrap(), sc.stream[..10].to_vec());
    }

    #[test]
    fn synthetic_provider_is_deterministic() {
        let sc = scenario(7);
        let live: Vec<FrameRecord> = SyntheticLive::new(&sc.params).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(live, sc.stream);
    }

    #[test]
    fn prediction_json_layout() {
        let r = PredictionResult {
            probs: Probabilities {
                left: 0.25,
                middle: 0.25,
                right: 0.5,
            },
            argmax: DirectionLabel::Right,
            endpoint: 97,
            indices: vec![0, 14],
            repairs: vec![],
            latency_ms: 12.4,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["probs"]["right"], 0.5);
        assert_eq!(v["argmax"], "right");
        assert_eq!(v["endpoint"], 97);
        assert_eq!(v["latency_ms"], 12.4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn trigger_matches_offline_endpoint(seed in any::<u64>(), th in prop::sample::select(vec![0.15, 0.25, 0.35])) {
            let sc = scenario(seed);
            let cfg = ThresholdConfig::new(th).unwrap();
            let mut st = PipelineState::new();
            let mut trig = None;
            let mut phases = vec![st.phase];
            for r in sc.stream.iter().cloned() {
                if let Some(e) = st.observe(r, &cfg).unwrap() {
                    trig = Some(e);
                }
                phases.push(st.phase);
            }
            prop_assert!(phases.windows(2).all(|w| w[0] <= w[1]));
            let offline = crate::segmentation::ratio_trace(&sc.stream)
                .and_then(|t| find_endpoint(&t, &cfg))
                .ok();
            prop_assert_eq!(trig, offline);
        }
    }
}
