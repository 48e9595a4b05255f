//! Recording and record-file formats.
//!
//! Recordings are either CSV with a `t,ch0..chK` header (volts) or raw
//! little-endian i16 interleaved samples with a `key=value` sidecar holding
//! `rate_hz`, `lsb_v` and `channels`. Record files (features, events,
//! phases, stimulator traces) are CSV with fixed headers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::connectivity::{FeatureKind, FeatureWindowRecord};
use crate::fixed::UQ15;
use crate::phase::PhaseCode;
use crate::stimulator::StimTracePoint;
use crate::trigger::{StimMode, TriggerEvent};
use crate::{Error, Result, N_CHANNELS};

/// Channel-major voltage traces at a common rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub rate_hz: f64,
    pub channels: Vec<Vec<f64>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn data_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Data { line: line as usize, msg: msg.into() }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => data_err(line, format!("{kind:?}")),
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| data_err(line, format!("missing column {name}")))?;
    raw.trim().parse().map_err(|_| data_err(line, format!("cannot parse {name} value '{raw}'")))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(csv_err)?;
    let got: Vec<&str> = h.iter().map(str::trim).collect();
    if got != expected {
        return Err(data_err(1, format!("expected header '{}', found '{}'", expected.join(","), got.join(","))));
    }
    Ok(())
}

/// Parse a `t,ch0..chK` CSV recording. The rate is taken from the first two
/// timestamps.
pub fn read_csv_recording<R: Read>(src: R) -> Result<Recording> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"t") || cols.len() < 2 || cols.len() > N_CHANNELS + 1 {
        return Err(data_err(1, "header must be t,ch0..chK with at most 16 channels"));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("ch{i}") {
            return Err(data_err(1, format!("column {} should be ch{i}, found '{c}'", i + 1)));
        }
    }
    let n_ch = cols.len() - 1;
    let mut channels = vec![Vec::new(); n_ch];
    let mut times = Vec::with_capacity(2);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != n_ch + 1 {
            return Err(data_err(line, format!("expected {} fields, found {}", n_ch + 1, rec.len())));
        }
        let t: f64 = parse_field(&rec, 0, "t")?;
        if times.len() < 2 {
            times.push(t);
        }
        for (ch, buf) in channels.iter_mut().enumerate() {
            let v: f64 = parse_field(&rec, ch + 1, &format!("ch{ch}"))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("non-finite value in ch{ch}")));
            }
            buf.push(v);
        }
    }
    if times.len() < 2 || !(times[1] > times[0]) {
        return Err(data_err(2, "need at least two rows with increasing t to infer the rate"));
    }
    Ok(Recording { rate_hz: 1.0 / (times[1] - times[0]), channels })
}

pub fn read_csv_recording_file(path: &Path) -> Result<Recording> {
    read_csv_recording(BufReader::new(File::open(path)?))
}

pub fn write_csv_recording<W: Write>(dst: W, rec: &Recording) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    let mut header = vec!["t".to_string()];
    header.extend((0..rec.channels.len()).map(|i| format!("ch{i}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..rec.len() {
        row.clear();
        row.push((i as f64 / rec.rate_hz).to_string());
        row.extend(rec.channels.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub rate_hz: f64,
    pub lsb_v: f64,
    pub channels: usize,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut p = raw.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

pub fn parse_sidecar(text: &str) -> Result<RawSidecar> {
    let (mut rate, mut lsb, mut ch) = (None, None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| data_err(i as u64 + 1, format!("expected key=value, found '{line}'")))?;
        let bad = || data_err(i as u64 + 1, format!("bad value for {}", k.trim()));
        match k.trim() {
            "rate_hz" => rate = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            "lsb_v" => lsb = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            "channels" => ch = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
            other => return Err(data_err(i as u64 + 1, format!("unknown sidecar key '{other}'"))),
        }
    }
    let s = RawSidecar {
        rate_hz: rate.ok_or_else(|| data_err(0, "sidecar lacks rate_hz"))?,
        lsb_v: lsb.ok_or_else(|| data_err(0, "sidecar lacks lsb_v"))?,
        channels: ch.ok_or_else(|| data_err(0, "sidecar lacks channels"))?,
    };
    if !(s.rate_hz > 0.0 && s.lsb_v > 0.0) || s.channels == 0 || s.channels > N_CHANNELS {
        return Err(data_err(0, "sidecar values out of range"));
    }
    Ok(s)
}

pub fn format_sidecar(s: &RawSidecar) -> String {
    format!("rate_hz={}\nlsb_v={}\nchannels={}\n", s.rate_hz, s.lsb_v, s.channels)
}

/// Read raw interleaved i16 samples plus sidecar; samples are scaled by
/// `lsb_v` into volts.
pub fn read_raw_recording(path: &Path) -> Result<Recording> {
    let meta = parse_sidecar(&std::fs::read_to_string(sidecar_path(path))?)?;
    let bytes = std::fs::read(path)?;
    let frame = 2 * meta.channels;
    if bytes.len() % frame != 0 {
        return Err(Error::Input(format!(
            "raw file holds {} bytes, not a multiple of the {frame}-byte frame",
            bytes.len()
        )));
    }
    let mut channels = vec![Vec::with_capacity(bytes.len() / frame); meta.channels];
    for f in bytes.chunks_exact(frame) {
        for (ch, b) in f.chunks_exact(2).enumerate() {
            channels[ch].push(i16::from_le_bytes([b[0], b[1]]) as f64 * meta.lsb_v);
        }
    }
    Ok(Recording { rate_hz: meta.rate_hz, channels })
}

/// Write a recording as raw i16 (nearest code at `lsb_v`, saturating).
pub fn write_raw_recording(path: &Path, rec: &Recording, lsb_v: f64) -> Result<()> {
    let meta = RawSidecar { rate_hz: rec.rate_hz, lsb_v, channels: rec.channels.len() };
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..rec.len() {
        for c in &rec.channels {
            let code = (c[i] / lsb_v).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            w.write_all(&code.to_le_bytes())?;
        }
    }
    w.flush()?;
    std::fs::write(sidecar_path(path), format_sidecar(&meta))?;
    Ok(())
}

/// Load a recording by extension: `.csv` or anything else as raw.
pub fn read_recording(path: &Path) -> Result<Recording> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv_recording_file(path)
    } else {
        read_raw_recording(path)
    }
}

pub const FEATURES_HEADER: [&str; 5] = ["window", "pair_or_ch", "kind", "value_q15", "value_float"];

pub fn write_features<W: Write>(dst: W, records: &[FeatureWindowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(FEATURES_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.window_index.to_string(),
            r.source.to_string(),
            r.kind.as_str().to_string(),
            r.value.0.to_string(),
            format!("{:.6}", r.value_f64()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(src: R) -> Result<Vec<FeatureWindowRecord>> {
    let mut rdr = csv::Reader::from_reader(src);
    check_header(&mut rdr, &FEATURES_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let kind_s: String = parse_field(&rec, 2, "kind")?;
            let kind = FeatureKind::parse(&kind_s).ok_or_else(|| data_err(line, format!("unknown kind '{kind_s}'")))?;
            let raw: u16 = parse_field(&rec, 3, "value_q15")?;
            if raw > UQ15::ONE.0 {
                return Err(data_err(line, format!("value_q15 {raw} exceeds 1.0")));
            }
            Ok(FeatureWindowRecord {
                window_index: parse_field(&rec, 0, "window")?,
                source: parse_field(&rec, 1, "pair_or_ch")?,
                kind,
                value: UQ15(raw),
            })
        })
        .collect()
}

pub const EVENTS_HEADER: [&str; 5] = ["t_index", "mode", "effective_target_code", "window_value", "pair"];

/// The columns of one events.csv row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_index: u64,
    pub mode: StimMode,
    pub effective_target: PhaseCode,
    pub window_value: Option<UQ15>,
    pub source: u8,
}

impl From<&TriggerEvent> for EventRecord {
    fn from(e: &TriggerEvent) -> Self {
        EventRecord {
            t_index: e.t_index,
            mode: e.mode,
            effective_target: e.effective_target,
            window_value: e.window_value,
            source: e.source,
        }
    }
}

pub fn write_events<W: Write>(dst: W, events: &[EventRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(EVENTS_HEADER).map_err(csv_err)?;
    for e in events {
        w.write_record([
            e.t_index.to_string(),
            e.mode.as_str().to_string(),
            e.effective_target.code().to_string(),
            e.window_value.map_or(String::new(), |v| v.0.to_string()),
            e.source.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(src: R) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::Reader::from_reader(src);
    check_header(&mut rdr, &EVENTS_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let mode_s: String = parse_field(&rec, 1, "mode")?;
            let mode = StimMode::parse(&mode_s).ok_or_else(|| data_err(line, format!("unknown mode '{mode_s}'")))?;
            let code: i32 = parse_field(&rec, 2, "effective_target_code")?;
            let effective_target =
                PhaseCode::new(code).ok_or_else(|| data_err(line, format!("phase code {code} outside -512..511")))?;
            let wv = rec.get(3).unwrap_or("").trim();
            let window_value = if wv.is_empty() {
                None
            } else {
                let raw: u16 = parse_field(&rec, 3, "window_value")?;
                Some(UQ15(raw))
            };
            Ok(EventRecord {
                t_index: parse_field(&rec, 0, "t_index")?,
                mode,
                effective_target,
                window_value,
                source: parse_field(&rec, 4, "pair")?,
            })
        })
        .collect()
}

pub const STIM_TRACE_HEADER: [&str; 4] = ["t_us", "i_ua", "v_out_mv", "v_cap_mv"];

pub fn write_stim_trace<W: Write>(dst: W, points: &[StimTracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(STIM_TRACE_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record([p.t_us.to_string(), p.i_ua.to_string(), p.v_out_mv.to_string(), p.v_cap_mv.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stim_trace<R: Read>(src: R) -> Result<Vec<StimTracePoint>> {
    let mut rdr = csv::Reader::from_reader(src);
    check_header(&mut rdr, &STIM_TRACE_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(StimTracePoint {
                t_us: parse_field(&rec, 0, "t_us")?,
                i_ua: parse_field(&rec, 1, "i_ua")?,
                v_out_mv: parse_field(&rec, 2, "v_out_mv")?,
                v_cap_mv: parse_field(&rec, 3, "v_cap_mv")?,
            })
        })
        .collect()
}

/// One decimated time step of extracted phase codes, one per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseRow {
    pub t_index: u64,
    pub codes: Vec<PhaseCode>,
}

pub fn phases_header(n: usize) -> Vec<String> {
    std::iter::once("t_index".to_string()).chain((0..n).map(|i| format!("ch{i}"))).collect()
}

/// Streaming writer for phases.csv.
pub struct PhaseWriter<W: Write> {
    w: csv::Writer<W>,
    row: Vec<String>,
}

impl<W: Write> PhaseWriter<W> {
    pub fn new(dst: W, n_channels: usize) -> Result<Self> {
        let mut w = csv::Writer::from_writer(dst);
        w.write_record(phases_header(n_channels)).map_err(csv_err)?;
        Ok(PhaseWriter { w, row: Vec::new() })
    }

    pub fn write(&mut self, t_index: u64, codes: &[PhaseCode]) -> Result<()> {
        self.row.clear();
        self.row.push(t_index.to_string());
        self.row.extend(codes.iter().map(|c| c.code().to_string()));
        self.w.write_record(&self.row).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn read_phases<R: Read>(src: R) -> Result<Vec<PhaseRow>> {
    let mut rdr = csv::Reader::from_reader(src);
    let n = rdr.headers().map_err(csv_err)?.len().saturating_sub(1);
    check_header(&mut rdr, &phases_header(n).iter().map(String::as_str).collect::<Vec<_>>())?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let codes = (0..n)
                .map(|i| {
                    let c: i32 = parse_field(&rec, i + 1, "phase")?;
                    PhaseCode::new(c).ok_or_else(|| data_err(line, format!("phase code {c} outside -512..511")))
                })
                .collect::<Result<_>>()?;
            Ok(PhaseRow { t_index: parse_field(&rec, 0, "t_index")?, codes })
        })
        .collect()
}

pub fn write_features_file(path: &Path, records: &[FeatureWindowRecord]) -> Result<()> {
    write_features(BufWriter::new(File::create(path)?), records)
}

pub fn write_events_file(path: &Path, events: &[EventRecord]) -> Result<()> {
    write_events(BufWriter::new(File::create(path)?), events)
}

pub fn write_stim_trace_file(path: &Path, points: &[StimTracePoint]) -> Result<()> {
    write_stim_trace(BufWriter::new(File::create(path)?), points)
}

pub fn read_features_file(path: &Path) -> Result<Vec<FeatureWindowRecord>> {
    read_features(BufReader::new(File::open(path)?))
}

pub fn read_events_file(path: &Path) -> Result<Vec<EventRecord>> {
    read_events(BufReader::new(File::open(path)?))
}
