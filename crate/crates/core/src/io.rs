//! MOTChallenge-style text files, sidecars, sequence directories and config.
//!
//! A sequence directory holds `seqinfo.ini`, `det/det.txt` and optionally
//! `gt/gt.txt`, `det/embeddings.txt` and `det/humanity.txt`. Sidecar rows
//! address a detection by frame and its index among that frame's rows in
//! `det.txt`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::preprocess::humanity_from_score;
use crate::types::{l2_norm, normalize, BoundingBox, Detection, Frame, Trajectory, TrajectoryEntry};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields<'a>(path: &Path, n: usize, line: &'a str, min: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() < min {
        return Err(Error::parse(
            path,
            n,
            format!("expected at least {min} fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(path: &Path, n: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(path, n, format!("invalid {what} `{field}`")))
}

/// Frame number parsed leniently: "12" and "12.0" are both accepted.
fn frame_field(path: &Path, n: usize, field: &str) -> Result<Frame> {
    let v: f64 = num(path, n, field, "frame")?;
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::parse(
            path,
            n,
            format!("frame `{field}` must be a positive integer"),
        ));
    }
    Ok(v as Frame)
}

fn id_field(path: &Path, n: usize, field: &str) -> Result<i64> {
    let v: f64 = num(path, n, field, "id")?;
    if v.fract() != 0.0 {
        return Err(Error::parse(path, n, format!("id `{field}` must be an integer")));
    }
    Ok(v as i64)
}

fn box_fields(path: &Path, n: usize, f: &[&str]) -> Result<[f64; 4]> {
    Ok([
        num(path, n, f[2], "x")?,
        num(path, n, f[3], "y")?,
        num(path, n, f[4], "width")?,
        num(path, n, f[5], "height")?,
    ])
}

/// Parses detection rows `frame,id,x,y,w,h,conf[,...]`. Humanity is derived
/// from the score; rows with non-positive size are skipped.
pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in data_lines(text) {
        let f = fields(path, n, line, 7)?;
        let frame = frame_field(path, n, f[0])?;
        let [x, y, w, h] = box_fields(path, n, &f)?;
        let conf: f64 = num(path, n, f[6], "confidence")?;
        if !(w > 0.0 && h > 0.0) {
            log::warn!("{}:{n}: skipping box with non-positive size", path.display());
            continue;
        }
        out.push(Detection::new(
            frame,
            BoundingBox::new(x, y, w, h),
            conf,
            humanity_from_score(conf),
        ));
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&read_text(path)?, path)
}

/// Detection rows in frame order, values at full precision so that reading
/// them back is exact.
pub fn format_detections(detections: &[Detection]) -> String {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by_key(|d| d.frame);
    let mut s = String::new();
    for d in sorted {
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{},-1,{},{},{},{},{},-1,-1,-1",
            d.frame, b.x, b.y, b.w, b.h, d.det_score
        );
    }
    s
}

pub fn write_detections(detections: &[Detection], path: &Path) -> Result<()> {
    write_text(path, &format_detections(detections))
}

/// Which ground-truth rows to keep.
#[derive(Debug, Clone, Default)]
pub struct GtFilter {
    /// Keep only these class ids (8th column) when set.
    pub classes: Option<Vec<i64>>,
}

/// Parses `frame,id,x,y,w,h[,flag,class,visibility]` rows into per-identity
/// trajectories. Rows flagged 0 are ignored; duplicate (frame, id) rows are
/// an error.
pub fn parse_ground_truth(text: &str, path: &Path, filter: &GtFilter) -> Result<Vec<Trajectory>> {
    parse_tracks(text, path, Some(filter))
}

fn parse_tracks(text: &str, path: &Path, filter: Option<&GtFilter>) -> Result<Vec<Trajectory>> {
    let mut tracks: BTreeMap<u32, BTreeMap<Frame, BoundingBox>> = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let f = fields(path, n, line, 6)?;
        let frame = frame_field(path, n, f[0])?;
        let id = id_field(path, n, f[1])?;
        if id < 0 || id > u32::MAX as i64 {
            return Err(Error::parse(path, n, format!("identity {id} out of range")));
        }
        let [x, y, w, h] = box_fields(path, n, &f)?;
        if let Some(filter) = filter {
            if f.len() > 6 && num::<f64>(path, n, f[6], "flag")? == 0.0 {
                continue;
            }
            if let (Some(classes), Some(c)) = (&filter.classes, f.get(7)) {
                if !classes.contains(&id_field(path, n, c)?) {
                    continue;
                }
            }
        }
        if !(w > 0.0 && h > 0.0) {
            log::warn!("{}:{n}: skipping box with non-positive size", path.display());
            continue;
        }
        if tracks
            .entry(id as u32)
            .or_default()
            .insert(frame, BoundingBox::new(x, y, w, h))
            .is_some()
        {
            return Err(Error::parse(
                path,
                n,
                format!("duplicate row for frame {frame}, identity {id}"),
            ));
        }
    }
    tracks
        .into_iter()
        .map(|(id, boxes)| Trajectory::from_boxes(id, boxes))
        .collect()
}

pub fn read_ground_truth(path: &Path, filter: &GtFilter) -> Result<Vec<Trajectory>> {
    parse_ground_truth(&read_text(path)?, path, filter)
}

/// Ground-truth rows (flag 1, class 1, visibility 1) at full precision.
pub fn format_ground_truth(tracks: &[Trajectory]) -> String {
    let mut s = String::new();
    for (f, id, b) in sorted_rows(tracks) {
        let _ = writeln!(s, "{f},{id},{},{},{},{},1,1,1", b.x, b.y, b.w, b.h);
    }
    s
}

pub fn write_ground_truth(tracks: &[Trajectory], path: &Path) -> Result<()> {
    write_text(path, &format_ground_truth(tracks))
}

fn sorted_rows(tracks: &[Trajectory]) -> Vec<(Frame, u32, BoundingBox)> {
    let mut rows: Vec<(Frame, u32, BoundingBox)> = tracks
        .iter()
        .flat_map(|t| t.entries.iter().map(move |e| (e.frame, t.identity, e.bbox)))
        .collect();
    rows.sort_by_key(|&(f, id, _)| (f, id));
    rows
}

/// Result rows sorted by frame then identity, two decimals, confidence 1.
/// The interpolation flag has no column and is not written.
pub fn format_results(tracks: &[Trajectory]) -> String {
    let mut s = String::new();
    for (f, id, b) in sorted_rows(tracks) {
        let _ = writeln!(s, "{f},{id},{:.2},{:.2},{:.2},{:.2},1.00,-1,-1,-1", b.x, b.y, b.w, b.h);
    }
    s
}

pub fn write_results(tracks: &[Trajectory], path: &Path) -> Result<()> {
    write_text(path, &format_results(tracks))
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<Trajectory>> {
    parse_tracks(text, path, None)
}

pub fn read_results(path: &Path) -> Result<Vec<Trajectory>> {
    parse_results(&read_text(path)?, path)
}

/// Embeddings keyed by (frame, index of the detection within its frame).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<(Frame, usize), Vec<f64>>,
}

/// Parses `dim,D` followed by `frame,det_index,v1..vD` rows. Vectors whose norm
/// is off by more than 1e-3 are renormalised with a warning.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut lines = data_lines(text);
    let Some((n, header)) = lines.next() else {
        return Ok(EmbeddingTable::default());
    };
    let dim = match header.split_once(',') {
        Some(("dim", d)) => num::<usize>(path, n, d.trim(), "dimension")?,
        _ => return Err(Error::parse(path, n, "expected header `dim,D`")),
    };
    let mut table = EmbeddingTable {
        dim,
        rows: BTreeMap::new(),
    };
    for (n, line) in lines {
        let f = fields(path, n, line, 2 + dim)?;
        if f.len() != 2 + dim {
            return Err(Error::parse(
                path,
                n,
                format!("expected {} fields, found {}", 2 + dim, f.len()),
            ));
        }
        let frame = frame_field(path, n, f[0])?;
        let idx: usize = num(path, n, f[1], "detection index")?;
        let mut v = f[2..]
            .iter()
            .map(|x| num::<f64>(path, n, x, "embedding value"))
            .collect::<Result<Vec<_>>>()?;
        let norm = l2_norm(&v);
        if (norm - 1.0).abs() > 1e-3 {
            log::warn!("{}:{n}: embedding norm {norm:.4}, renormalising", path.display());
            if norm == 0.0 {
                return Err(Error::parse(path, n, "zero embedding"));
            }
            normalize(&mut v);
        }
        if table.rows.insert((frame, idx), v).is_some() {
            return Err(Error::parse(
                path,
                n,
                format!("duplicate embedding for frame {frame}, index {idx}"),
            ));
        }
    }
    Ok(table)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&read_text(path)?, path)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut s = format!("dim,{}\n", table.dim);
    for ((f, i), v) in &table.rows {
        let _ = write!(s, "{f},{i}");
        for x in v {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    write_text(path, &format_embeddings(table))
}

/// Parses `frame,det_index,humanity` rows.
pub fn parse_humanity(text: &str, path: &Path) -> Result<BTreeMap<(Frame, usize), f64>> {
    let mut out = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let f = fields(path, n, line, 3)?;
        let frame = frame_field(path, n, f[0])?;
        let idx: usize = num(path, n, f[1], "detection index")?;
        let h: f64 = num(path, n, f[2], "humanity")?;
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::parse(path, n, format!("humanity {h} outside [0, 1]")));
        }
        if out.insert((frame, idx), h).is_some() {
            return Err(Error::parse(
                path,
                n,
                format!("duplicate humanity for frame {frame}, index {idx}"),
            ));
        }
    }
    Ok(out)
}

pub fn format_humanity(values: &BTreeMap<(Frame, usize), f64>) -> String {
    let mut s = String::new();
    for ((f, i), h) in values {
        let _ = writeln!(s, "{f},{i},{h}");
    }
    s
}

/// Index of every detection among the detections of its frame, in order.
pub fn frame_indices(detections: &[Detection]) -> Vec<usize> {
    let mut counters: HashMap<Frame, usize> = HashMap::new();
    detections
        .iter()
        .map(|d| {
            let c = counters.entry(d.frame).or_default();
            *c += 1;
            *c - 1
        })
        .collect()
}

/// Attaches sidecar values; every key must name an existing detection.
pub fn attach_sidecars(
    detections: &mut [Detection],
    embeddings: Option<&EmbeddingTable>,
    humanity: Option<&BTreeMap<(Frame, usize), f64>>,
) -> Result<()> {
    let idx = frame_indices(detections);
    let keys: HashMap<(Frame, usize), usize> = detections
        .iter()
        .zip(&idx)
        .enumerate()
        .map(|(k, (d, &i))| ((d.frame, i), k))
        .collect();
    if let Some(t) = embeddings {
        for (key, v) in &t.rows {
            let k = keys
                .get(key)
                .ok_or_else(|| Error::Config(format!("embedding for missing detection {key:?}")))?;
            detections[*k].embedding = Some(v.clone());
        }
    }
    if let Some(h) = humanity {
        for (key, &v) in h {
            let k = keys
                .get(key)
                .ok_or_else(|| Error::Config(format!("humanity for missing detection {key:?}")))?;
            detections[*k].humanity = v;
        }
    }
    Ok(())
}

/// A sequence as stored on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceBundle {
    pub name: String,
    pub frame_count: Frame,
    /// Detections with sidecar values attached, in file order.
    pub detections: Vec<Detection>,
    pub gt: Option<Vec<Trajectory>>,
}

pub struct SequencePaths {
    pub seqinfo: PathBuf,
    pub det: PathBuf,
    pub gt: PathBuf,
    pub embeddings: PathBuf,
    pub humanity: PathBuf,
}

impl SequencePaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            seqinfo: dir.join("seqinfo.ini"),
            det: dir.join("det").join("det.txt"),
            gt: dir.join("gt").join("gt.txt"),
            embeddings: dir.join("det").join("embeddings.txt"),
            humanity: dir.join("det").join("humanity.txt"),
        }
    }
}

fn parse_seqinfo(text: &str, path: &Path) -> Result<(String, Frame)> {
    let mut name = None;
    let mut length = None;
    for (n, line) in data_lines(text) {
        if line.starts_with('[') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, n, "expected `key=value`"));
        };
        match k.trim() {
            "name" => name = Some(v.trim().to_string()),
            "seqLength" => length = Some(num(path, n, v.trim(), "sequence length")?),
            _ => {}
        }
    }
    Ok((
        name.unwrap_or_default(),
        length.ok_or_else(|| Error::parse(path, 0, "missing seqLength"))?,
    ))
}

pub fn read_sequence(dir: &Path) -> Result<SequenceBundle> {
    let p = SequencePaths::new(dir);
    let mut detections = read_detections(&p.det)?;
    let embeddings = p
        .embeddings
        .exists()
        .then(|| read_embeddings(&p.embeddings))
        .transpose()?;
    let humanity = if p.humanity.exists() {
        Some(parse_humanity(&read_text(&p.humanity)?, &p.humanity)?)
    } else {
        None
    };
    attach_sidecars(&mut detections, embeddings.as_ref(), humanity.as_ref())?;
    let gt =
        p.gt.exists()
            .then(|| read_ground_truth(&p.gt, &GtFilter::default()))
            .transpose()?;
    let (name, frame_count) = if p.seqinfo.exists() {
        parse_seqinfo(&read_text(&p.seqinfo)?, &p.seqinfo)?
    } else {
        let last = detections.iter().map(|d| d.frame).max().unwrap_or(0);
        let gt_last = gt
            .iter()
            .flatten()
            .filter_map(|t| t.entries.last().map(|e| e.frame))
            .max()
            .unwrap_or(0);
        (String::new(), last.max(gt_last))
    };
    Ok(SequenceBundle {
        name,
        frame_count,
        detections,
        gt,
    })
}

/// Writes det, sidecars (when any detection carries an embedding), gt and
/// `seqinfo.ini`. Humanity is always written since the det format has no
/// column for it.
pub fn write_sequence(bundle: &SequenceBundle, dir: &Path) -> Result<()> {
    let p = SequencePaths::new(dir);
    let mut order: Vec<usize> = (0..bundle.detections.len()).collect();
    order.sort_by_key(|&i| bundle.detections[i].frame);
    let dets: Vec<Detection> = order.iter().map(|&i| bundle.detections[i].clone()).collect();
    write_detections(&dets, &p.det)?;
    let idx = frame_indices(&dets);
    let humanity: BTreeMap<(Frame, usize), f64> = dets
        .iter()
        .zip(&idx)
        .map(|(d, &i)| ((d.frame, i), d.humanity))
        .collect();
    write_text(&p.humanity, &format_humanity(&humanity))?;
    let dim = dets.iter().find_map(|d| d.embedding.as_ref().map(Vec::len));
    if let Some(dim) = dim {
        let rows = dets
            .iter()
            .zip(&idx)
            .filter_map(|(d, &i)| d.embedding.clone().map(|v| ((d.frame, i), v)))
            .collect();
        write_embeddings(&EmbeddingTable { dim, rows }, &p.embeddings)?;
    }
    if let Some(gt) = &bundle.gt {
        write_ground_truth(gt, &p.gt)?;
    }
    let info = format!("[Sequence]\nname={}\nseqLength={}\n", bundle.name, bundle.frame_count);
    write_text(&p.seqinfo, &info)
}

pub fn load_config(path: &Path) -> Result<EngineConfig> {
    EngineConfig::parse(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_config(cfg: &EngineConfig, path: &Path) -> Result<()> {
    write_text(path, &cfg.to_text())
}

/// Writes any text file, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn read_file(path: &Path) -> Result<String> {
    read_text(path)
}

/// Trajectory entries as `(frame, identity, box, interpolated)` rows.
pub fn trajectory_rows(tracks: &[Trajectory]) -> Vec<(Frame, u32, TrajectoryEntry)> {
    let mut rows: Vec<_> = tracks
        .iter()
        .flat_map(|t| t.entries.iter().map(move |e| (e.frame, t.identity, *e)))
        .collect();
    rows.sort_by_key(|&(f, id, _)| (f, id));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> PathBuf {
        PathBuf::from("test.txt")
    }

    #[test]
    fn detection_line() {
        let d = parse_detections("1,-1,10.0,20.0,5.0,8.0,0.9,-1,-1,-1\n", &p()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame, 1);
        assert_eq!(d[0].bbox, BoundingBox::new(10.0, 20.0, 5.0, 8.0));
        assert_eq!(d[0].det_score, 0.9);
        assert!(parse_detections("", &p()).unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_detections("1,-1,1,1,1,1,0.5\n2,-1,abc,1,1,1,0.5\n", &p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_detections("1,-1,1,1\n", &p()).is_err());
        // Non-positive sizes are skipped, not fatal.
        assert_eq!(parse_detections("1,-1,1,1,0,1,0.5\n", &p()).unwrap().len(), 0);
    }

    #[test]
    fn detections_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dets: Vec<Detection> = (0..1000)
            .map(|_| {
                let score: f64 = rng.random_range(-3.0..3.0);
                Detection::new(
                    rng.random_range(1..200),
                    BoundingBox::new(
                        rng.random_range(-50.0..1900.0),
                        rng.random_range(-50.0..1000.0),
                        rng.random_range(1.0..300.0),
                        rng.random_range(1.0..300.0),
                    ),
                    score,
                    humanity_from_score(score),
                )
            })
            .collect();
        dets.sort_by_key(|d| d.frame);
        let back = parse_detections(&format_detections(&dets), &p()).unwrap();
        assert_eq!(back, dets);
    }

    #[test]
    fn ground_truth_parsing() {
        let text = "1,3,0,0,10,20,1,1,1\n2,3,1,0,10,20,1,1,1\n1,4,50,0,10,20,0,1,1\n1,5,90,0,10,20,1,2,1\n";
        let all = parse_ground_truth(text, &p(), &GtFilter::default()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].identity, 3);
        assert_eq!(all[0].len(), 2);
        let pedestrians = parse_ground_truth(text, &p(), &GtFilter { classes: Some(vec![1]) }).unwrap();
        assert_eq!(pedestrians.len(), 1);
        assert!(parse_ground_truth("", &p(), &GtFilter::default()).unwrap().is_empty());
        assert!(parse_ground_truth("1,3,0,0,1,1\n1,3,0,0,1,1\n", &p(), &GtFilter::default()).is_err());
    }

    fn random_tracks(seed: u64) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=20)
            .map(|id| {
                let start = rng.random_range(1..50);
                let n = rng.random_range(1..40);
                Trajectory::from_boxes(
                    id,
                    (start..start + n).map(|f| {
                        (
                            f,
                            BoundingBox::new(
                                rng.random_range(0.0..1000.0),
                                rng.random_range(0.0..1000.0),
                                rng.random_range(1.0..100.0),
                                rng.random_range(1.0..100.0),
                            ),
                        )
                    }),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn ground_truth_round_trip() {
        let tracks = random_tracks(3);
        let back = parse_ground_truth(&format_ground_truth(&tracks), &p(), &GtFilter::default()).unwrap();
        assert_eq!(back, tracks);
    }

    #[test]
    fn results_round_trip_at_two_decimals() {
        let mut tracks = random_tracks(4);
        for t in &mut tracks {
            for e in &mut t.entries {
                e.bbox = BoundingBox::new(
                    (e.bbox.x * 100.0).round() / 100.0,
                    (e.bbox.y * 100.0).round() / 100.0,
                    (e.bbox.w * 100.0).round() / 100.0,
                    (e.bbox.h * 100.0).round() / 100.0,
                );
            }
        }
        tracks[0].entries[0].interpolated = true;
        let text = format_results(&tracks);
        assert_eq!(text, format_results(&tracks));
        let back = parse_results(&text, &p()).unwrap();
        tracks[0].entries[0].interpolated = false;
        assert_eq!(back, tracks);
        assert_eq!(format_results(&[]), "");
        let first = text.lines().next().unwrap();
        assert!(first.ends_with(",1.00,-1,-1,-1"), "{first}");
    }

    #[test]
    fn embeddings_round_trip_and_renormalise() {
        assert_eq!(parse_embeddings("", &p()).unwrap(), EmbeddingTable::default());
        let t = parse_embeddings("dim,2\n3,0,0.6,0.8\n", &p()).unwrap();
        assert_eq!(t.rows[&(3, 0)], vec![0.6, 0.8]);
        let t = parse_embeddings("dim,2\n3,0,3,4\n", &p()).unwrap();
        assert!((t.rows[&(3, 0)][0] - 0.6).abs() < 1e-12);
        assert!(parse_embeddings("dim,2\n3,0,1\n", &p()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = EmbeddingTable {
            dim: 8,
            rows: BTreeMap::new(),
        };
        for f in 1..50 {
            for i in 0..3 {
                let mut v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&mut v);
                table.rows.insert((f, i), v);
            }
        }
        assert_eq!(parse_embeddings(&format_embeddings(&table), &p()).unwrap(), table);
    }

    #[test]
    fn sidecars_must_reference_detections() {
        let mut dets = parse_detections("1,-1,1,1,1,1,0.5\n1,-1,5,1,1,1,0.5\n", &p()).unwrap();
        let h = parse_humanity("1,1,0.25\n", &p()).unwrap();
        attach_sidecars(&mut dets, None, Some(&h)).unwrap();
        assert_eq!(dets[1].humanity, 0.25);
        let bad = parse_humanity("2,0,0.25\n", &p()).unwrap();
        assert!(attach_sidecars(&mut dets, None, Some(&bad)).is_err());
        assert!(parse_humanity("1,0,1.5\n", &p()).is_err());
    }

    #[test]
    fn sequence_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dets = vec![
            Detection::new(1, BoundingBox::new(1.0, 2.0, 3.0, 4.0), 0.5, 0.9).with_embedding(vec![1.0, 0.0]),
            Detection::new(2, BoundingBox::new(2.0, 2.0, 3.0, 4.0), -0.5, 0.2).with_embedding(vec![0.0, 1.0]),
        ];
        let bundle = SequenceBundle {
            name: "demo".into(),
            frame_count: 3,
            detections: dets,
            gt: Some(random_tracks(1)),
        };
        write_sequence(&bundle, dir.path()).unwrap();
        assert_eq!(read_sequence(dir.path()).unwrap(), bundle);
    }

    #[test]
    fn config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.cfg");
        fs::write(&path, "").unwrap();
        assert_eq!(load_config(&path).unwrap(), EngineConfig::default());
        fs::write(&path, "dt_max = 12\n").unwrap();
        assert_eq!(load_config(&path).unwrap().dt_max, 12);
        fs::write(&path, "bogus = 1\n").unwrap();
        assert!(load_config(&path).unwrap_err().to_string().contains("bogus"));
        assert!(load_config(&dir.path().join("missing.cfg")).is_err());
    }
}
