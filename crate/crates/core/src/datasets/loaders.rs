//! Native-layout loaders for PAMAP2, HAPT and DSADS plus the CSV
//! interchange format (`subject_id,timestamp,label,ch_0,...,ch_{C-1}`).

use super::RawRecording;
use crate::{ClassId, Error, Result, SubjectId};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const PAMAP2_RATE_HZ: f64 = 100.0;
pub const HAPT_RATE_HZ: f64 = 50.0;
pub const DSADS_RATE_HZ: f64 = 25.0;

/// The twelve protocol activities kept by default. Activity 0 (transient) and
/// the optional activities 9, 10, 11, 18, 19, 20 are dropped.
pub const PAMAP2_DEFAULT_CLASSES: [ClassId; 12] = [1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24];

const PAMAP2_COLUMNS: usize = 54;

#[derive(Debug, Clone, PartialEq)]
pub struct Pamap2Options {
    pub keep_classes: Vec<ClassId>,
    /// Indices into the 52 sensor channels (heart rate first, then three IMUs
    /// of 17 columns each). `None` keeps all of them.
    pub channels: Option<Vec<usize>>,
}

impl Default for Pamap2Options {
    fn default() -> Self {
        Self { keep_classes: PAMAP2_DEFAULT_CLASSES.to_vec(), channels: None }
    }
}

fn parse_f64(token: &str, path: &Path, line: usize) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{}:{}: bad number {token:?}", path.display(), line)))
}

/// Reads one recording in the interchange CSV format.
///
/// When `sample_rate_hz` is `None` the rate is inferred from the timestamp span.
pub fn read_csv_recording(path: &Path, sample_rate_hz: Option<f64>) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.len() < 4
        || &headers[0] != "subject_id"
        || &headers[1] != "timestamp"
        || &headers[2] != "label"
    {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    let n_ch = headers.len() - 3;
    let mut subject: Option<SubjectId> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!("{}:{line}: wrong field count", path.display())));
        }
        let sid: SubjectId = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{}:{line}: bad subject id", path.display())))?;
        match subject {
            None => subject = Some(sid),
            Some(s) if s != sid => {
                return Err(Error::Parse(format!("{}:{line}: subject changes", path.display())))
            }
            _ => {}
        }
        timestamps.push(parse_f64(&record[1], path, line)?);
        labels.push(
            record[2]
                .trim()
                .parse::<ClassId>()
                .map_err(|_| Error::Parse(format!("{}:{line}: bad label", path.display())))?,
        );
        for c in 0..n_ch {
            values.push(parse_f64(&record[3 + c], path, line)?);
        }
    }
    let t = labels.len();
    let subject = subject.ok_or_else(|| Error::EmptyInput(format!("{}", path.display())))?;
    let rate = match sample_rate_hz {
        Some(r) => r,
        None if t >= 2 => (t - 1) as f64 / (timestamps[t - 1] - timestamps[0]),
        None => return Err(Error::Parse(format!("{}: cannot infer sample rate", path.display()))),
    };
    let channels = Array2::from_shape_vec((t, n_ch), values)
        .map_err(|e| Error::Parse(e.to_string()))?;
    RawRecording::new(subject, rate, channels, labels, timestamps)
}

pub fn write_csv_recording(recording: &RawRecording, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut header = vec!["subject_id".to_string(), "timestamp".into(), "label".into()];
    header.extend((0..recording.n_channels()).map(|c| format!("ch_{c}")));
    writer.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (i, row) in recording.channels.rows().into_iter().enumerate() {
        let mut fields = vec![
            recording.subject_id.to_string(),
            recording.timestamps[i].to_string(),
            recording.labels[i].to_string(),
        ];
        fields.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&fields).map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads every `*.csv` file in a directory, sorted by file name.
pub fn load_csv_dir(dir: &Path, sample_rate_hz: Option<f64>) -> Result<Vec<RawRecording>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no csv files in {}", dir.display())));
    }
    files.iter().map(|f| read_csv_recording(f, sample_rate_hz)).collect()
}

/// Splits rows into contiguous bouts of one kept label.
fn bouts<'a>(labels: &'a [ClassId], keep: &'a [ClassId]) -> impl Iterator<Item = (usize, usize)> + 'a {
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < labels.len() && !keep.contains(&labels[i]) {
            i += 1;
        }
        if i >= labels.len() {
            return None;
        }
        let start = i;
        while i < labels.len() && labels[i] == labels[start] {
            i += 1;
        }
        Some((start, i))
    })
}

/// Loads `subject1NN.dat` files from a PAMAP2 directory (or its `Protocol/`
/// subdirectory). Subject ids are `NN`, so `subject105.dat` is subject 5.
pub fn load_pamap2(dir: &Path, opts: &Pamap2Options) -> Result<Vec<RawRecording>> {
    let root = if dir.join("Protocol").is_dir() { dir.join("Protocol") } else { dir.to_path_buf() };
    let mut files: Vec<(SubjectId, PathBuf)> = fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            let id = name.strip_prefix("subject")?.strip_suffix(".dat")?.parse::<u32>().ok()?;
            Some((id.checked_sub(100).unwrap_or(id), p))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no subject*.dat in {}", root.display())));
    }
    let channels: Vec<usize> = opts.channels.clone().unwrap_or_else(|| (0..52).collect());
    if let Some(&bad) = channels.iter().find(|&&c| c >= 52) {
        return Err(Error::InvalidConfig(format!("PAMAP2 channel index {bad} out of range")));
    }
    let mut out = Vec::new();
    for (subject, path) in files {
        let text = fs::read_to_string(&path)?;
        let mut ts = Vec::new();
        let mut labels = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != PAMAP2_COLUMNS {
                return Err(Error::Parse(format!(
                    "{}:{}: expected {PAMAP2_COLUMNS} columns, found {}",
                    path.display(),
                    i + 1,
                    fields.len()
                )));
            }
            ts.push(parse_f64(fields[0], &path, i + 1)?);
            labels.push(parse_f64(fields[1], &path, i + 1)? as ClassId);
            let mut row = Vec::with_capacity(channels.len());
            for &c in &channels {
                row.push(parse_f64(fields[2 + c], &path, i + 1)?);
            }
            rows.push(row);
        }
        for (start, end) in bouts(&labels, &opts.keep_classes) {
            let flat: Vec<f64> = rows[start..end].iter().flatten().copied().collect();
            let data = Array2::from_shape_vec((end - start, channels.len()), flat)
                .map_err(|e| Error::Parse(e.to_string()))?;
            out.push(RawRecording::new(
                subject,
                PAMAP2_RATE_HZ,
                data,
                labels[start..end].to_vec(),
                ts[start..end].to_vec(),
            )?);
        }
    }
    Ok(out)
}

fn read_matrix(path: &Path, sep: Option<char>, cols: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match sep {
            Some(s) => line.split(s).collect(),
            None => line.split_whitespace().collect(),
        };
        if fields.len() != cols {
            return Err(Error::Parse(format!(
                "{}:{}: expected {cols} columns, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        rows.push(fields.iter().map(|f| parse_f64(f, path, i + 1)).collect::<Result<_>>()?);
    }
    Ok(rows)
}

/// Loads HAPT raw data: `labels.txt` plus `acc_expXX_userYY.txt` and
/// `gyro_expXX_userYY.txt`. Each labelled bout becomes one recording with six
/// channels (accelerometer then gyroscope).
pub fn load_hapt(dir: &Path) -> Result<Vec<RawRecording>> {
    let root = if dir.join("RawData").is_dir() { dir.join("RawData") } else { dir.to_path_buf() };
    let labels = read_matrix(&root.join("labels.txt"), None, 5)?;
    let mut cache: BTreeMap<(u32, u32), (Vec<Vec<f64>>, Vec<Vec<f64>>)> = BTreeMap::new();
    let mut out = Vec::new();
    for row in labels {
        let (exp, user, act) = (row[0] as u32, row[1] as u32, row[2] as ClassId);
        let (start, end) = (row[3] as usize, row[4] as usize);
        if !cache.contains_key(&(exp, user)) {
            let acc = read_matrix(&root.join(format!("acc_exp{exp:02}_user{user:02}.txt")), None, 3)?;
            let gyro =
                read_matrix(&root.join(format!("gyro_exp{exp:02}_user{user:02}.txt")), None, 3)?;
            cache.insert((exp, user), (acc, gyro));
        }
        let (acc, gyro) = &cache[&(exp, user)];
        if start == 0 || end < start || end > acc.len().min(gyro.len()) {
            return Err(Error::Parse(format!("HAPT label row {exp} {user} {start}..{end} out of range")));
        }
        let n = end - start + 1;
        let mut data = Array2::zeros((n, 6));
        for i in 0..n {
            for c in 0..3 {
                data[[i, c]] = acc[start - 1 + i][c];
                data[[i, 3 + c]] = gyro[start - 1 + i][c];
            }
        }
        let ts = (0..n).map(|i| (start - 1 + i) as f64 / HAPT_RATE_HZ).collect();
        out.push(RawRecording::new(user, HAPT_RATE_HZ, data, vec![act; n], ts)?);
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("HAPT labels.txt lists no bouts".into()));
    }
    Ok(out)
}

/// Loads DSADS `aXX/pY/sZZ.txt` segments (125 × 45, comma separated). The
/// segments of one (activity, subject) pair are concatenated in order so that
/// 5 s windows without overlap reproduce the native units.
pub fn load_dsads(dir: &Path) -> Result<Vec<RawRecording>> {
    let root = if dir.join("data").is_dir() { dir.join("data") } else { dir.to_path_buf() };
    let numbered = |p: &Path, prefix: &str| -> Option<u32> {
        p.file_name()?.to_str()?.strip_prefix(prefix)?.trim_end_matches(".txt").parse().ok()
    };
    let list = |p: &Path, prefix: &str| -> Result<Vec<(u32, PathBuf)>> {
        let mut v: Vec<(u32, PathBuf)> = fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|q| Some((numbered(&q, prefix)?, q)))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut out = Vec::new();
    for (activity, adir) in list(&root, "a")? {
        for (subject, pdir) in list(&adir, "p")? {
            let mut rows = Vec::new();
            let mut ts = Vec::new();
            for (segment, file) in list(&pdir, "s")? {
                let seg = read_matrix(&file, Some(','), 45)?;
                let base = (segment.saturating_sub(1)) as f64 * 5.0;
                ts.extend((0..seg.len()).map(|i| base + i as f64 / DSADS_RATE_HZ));
                rows.extend(seg);
            }
            if rows.is_empty() {
                continue;
            }
            let n = rows.len();
            let data = Array2::from_shape_vec((n, 45), rows.into_iter().flatten().collect())
                .map_err(|e| Error::Parse(e.to_string()))?;
            out.push(RawRecording::new(subject, DSADS_RATE_HZ, data, vec![activity; n], ts)?);
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("no DSADS segments under {}", root.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_round_trip_with_nan() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_vec((3, 2), vec![1.0, f64::NAN, 0.25, -3.5, 1e-7, 2.0]).unwrap();
        let rec = RawRecording::new(4, 50.0, data, vec![1, 1, 2], vec![0.0, 0.02, 0.04]).unwrap();
        let path = dir.path().join("r.csv");
        write_csv_recording(&rec, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("subject_id,timestamp,label,ch_0,ch_1\n"));
        assert!(text.contains("NaN"));
        let back = read_csv_recording(&path, Some(50.0)).unwrap();
        assert_eq!(back.labels, rec.labels);
        assert_eq!(back.timestamps, rec.timestamps);
        assert!(back.channels[[0, 1]].is_nan());
        assert_eq!(back.channels[[2, 0]], 1e-7);
        let inferred = read_csv_recording(&path, None).unwrap();
        assert!((inferred.sample_rate_hz - 50.0).abs() < 1e-9);
    }

    #[test]
    fn pamap2_bouts_and_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("subject105.dat")).unwrap();
        for (i, act) in [0, 1, 1, 1, 9, 2, 2].iter().enumerate() {
            let mut fields = vec![format!("{:.2}", i as f64 * 0.01), act.to_string()];
            fields.extend((0..52).map(|c| if c == 0 { "NaN".to_string() } else { format!("{c}.5") }));
            writeln!(f, "{}", fields.join(" ")).unwrap();
        }
        drop(f);
        let opts = Pamap2Options { channels: Some(vec![0, 1, 51]), ..Pamap2Options::default() };
        let recs = load_pamap2(dir.path(), &opts).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].subject_id, 5);
        assert_eq!(recs[0].labels, vec![1, 1, 1]);
        assert_eq!(recs[1].labels, vec![2, 2]);
        assert_eq!(recs[0].n_channels(), 3);
        assert_eq!(recs[0].channels[[0, 2]], 51.5);
    }

    #[test]
    fn hapt_bouts() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, rows: usize| {
            let mut f = fs::File::create(dir.path().join(name)).unwrap();
            for i in 0..rows {
                writeln!(f, "{i} {} {}", i + 1, i + 2).unwrap();
            }
        };
        write("acc_exp01_user02.txt", 10);
        write("gyro_exp01_user02.txt", 10);
        fs::write(dir.path().join("labels.txt"), "1 2 5 2 6\n1 2 7 8 10\n").unwrap();
        let recs = load_hapt(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].len(), 5);
        assert_eq!(recs[0].subject_id, 2);
        assert_eq!(recs[0].channels[[0, 0]], 1.0);
        assert_eq!(recs[0].channels[[0, 4]], 2.0);
        assert_eq!(recs[1].labels[0], 7);
    }

    #[test]
    fn dsads_segments_concatenate() {
        let dir = tempfile::tempdir().unwrap();
        let pdir = dir.path().join("a03").join("p2");
        fs::create_dir_all(&pdir).unwrap();
        for s in 1..=2 {
            let line = vec!["0.5"; 45].join(",");
            let body: String = (0..125).map(|_| format!("{line}\n")).collect();
            fs::write(pdir.join(format!("s{s:02}.txt")), body).unwrap();
        }
        let recs = load_dsads(dir.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].len(), 250);
        assert_eq!(recs[0].labels[0], 3);
        assert_eq!(recs[0].subject_id, 2);
        let windows = crate::datasets::segment_windows(&recs[0], 5.0, 0.0).unwrap();
        assert_eq!(windows.len(), 2);
    }
}
