//! JSON persistence and CSV export.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;
use crate::types::Dataset;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(
        std::fs::File::open(path)?,
    ))?)
}

/// Pretty-printed JSON; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = read_json(path)?;
    ds.validate()?;
    Ok(ds)
}

/// Long format, one row per `(trajectory, t)` including the terminal state:
/// `traj, t, s_0.., a, r` (`a` and `r` empty at `t = T + 1`).
pub fn write_dataset_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["traj".to_string(), "t".to_string()];
    header.extend((0..ds.state_dim).map(|j| format!("s_{j}")));
    header.push("a".into());
    header.push("r".into());
    out.write_record(&header)?;
    for (i, tr) in ds.trajectories.iter().enumerate() {
        for t in 1..=ds.horizon + 1 {
            let mut row = vec![i.to_string(), t.to_string()];
            row.extend(tr.state(t).iter().map(|v| v.to_string()));
            if t <= ds.horizon {
                row.push(tr.action(t).to_string());
                row.push(tr.reward(t).to_string());
            } else {
                row.push(String::new());
                row.push(String::new());
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Trajectory;

    #[test]
    fn csv_has_terminal_rows() {
        let ds = Dataset::new(
            2,
            1,
            2,
            0.9,
            vec![Trajectory {
                states: vec![vec![0.0], vec![1.0], vec![2.0]],
                actions: vec![0, 1],
                rewards: vec![0.5, -0.5],
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "traj,t,s_0,a,r");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "0,3,2,,");
    }
}
