//! Binary schedule container, stable across releases.
//!
//! Layout (all multi-byte integers little-endian):
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0      | 4    | magic `b"PSCH"` |
//! | 4      | 4    | `u32` format version (currently 1) |
//! | 8      | 1    | `u8` parametrization tag: 0 scalar, 1 diagonal, 2 full, 3 conv |
//! | 9      | var  | dims: none (scalar); `u32 n` (diagonal, full); `u32 h1, h2, m1, m2` (conv) |
//! | +0     | 4    | `u32` T, number of parameter vectors |
//! | +4     | 8    | `f64` safeguard step τ |
//! | +12    | 8    | `u64` r, parameters per vector |
//! | +20    | 8    | `u64` provenance seed |
//! | +28    | var  | `u32` length + UTF-8 provenance config hash |
//! | +      | var  | `u32` length + UTF-8 provenance dataset descriptor |
//! | +      | T·r·8| payload: θ_0 .. θ_{T-1}, each as r `f64` values in parameter order |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::preconditioners::{ParamVector, Parametrization};
use crate::trainer::{PreconditionerSchedule, Provenance};

pub const SCHEDULE_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"PSCH";

fn tag_of(p: &Parametrization) -> u8 {
    match p {
        Parametrization::Scalar => 0,
        Parametrization::Diagonal { .. } => 1,
        Parametrization::FullMatrix { .. } => 2,
        Parametrization::Conv { .. } => 3,
    }
}

/// Writes a schedule to `path` in the versioned binary layout above.
pub fn write_schedule(path: &Path, schedule: &PreconditionerSchedule) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(SCHEDULE_FORMAT_VERSION)?;
    let p = schedule.parametrization();
    w.write_u8(tag_of(p))?;
    match p {
        Parametrization::Scalar => {}
        Parametrization::Diagonal { n } | Parametrization::FullMatrix { n } => {
            w.write_u32::<LittleEndian>(*n as u32)?;
        }
        Parametrization::Conv { h1, h2, m1, m2 } => {
            for d in [h1, h2, m1, m2] {
                w.write_u32::<LittleEndian>(*d as u32)?;
            }
        }
    }
    w.write_u32::<LittleEndian>(schedule.len() as u32)?;
    w.write_f64::<LittleEndian>(schedule.tau())?;
    w.write_u64::<LittleEndian>(p.param_dim() as u64)?;
    let provenance = schedule.provenance();
    w.write_u64::<LittleEndian>(provenance.seed)?;
    for text in [&provenance.config_hash, &provenance.dataset] {
        let bytes = text.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
    }
    for theta in schedule.thetas() {
        for v in theta.params() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated {what} length: {e}")))?;
    let mut buf = vec![0_u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::ScheduleFormat(format!("truncated {what}: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::ScheduleFormat(format!("{what} is not UTF-8")))
}

/// Reads and validates a schedule file written by [`write_schedule`].
pub fn read_schedule(path: &Path) -> Result<PreconditionerSchedule> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0_u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::ScheduleFormat(format!("truncated magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::ScheduleFormat(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated version: {e}")))?;
    if version != SCHEDULE_FORMAT_VERSION {
        return Err(Error::ScheduleFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let tag = r
        .read_u8()
        .map_err(|e| Error::ScheduleFormat(format!("truncated parametrization tag: {e}")))?;
    let mut read_dim = |what: &str| -> Result<usize> {
        Ok(r.read_u32::<LittleEndian>()
            .map_err(|e| Error::ScheduleFormat(format!("truncated {what}: {e}")))?
            as usize)
    };
    let parametrization = match tag {
        0 => Parametrization::Scalar,
        1 => Parametrization::Diagonal {
            n: read_dim("diagonal size")?,
        },
        2 => Parametrization::FullMatrix {
            n: read_dim("matrix size")?,
        },
        3 => {
            let h1 = read_dim("kernel height")?;
            let h2 = read_dim("kernel width")?;
            let m1 = read_dim("image height")?;
            let m2 = read_dim("image width")?;
            Parametrization::Conv { h1, h2, m1, m2 }
        }
        other => {
            return Err(Error::ScheduleFormat(format!(
                "unknown parametrization tag {other}"
            )))
        }
    };
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated schedule length: {e}")))?
        as usize;
    if count == 0 {
        return Err(Error::ScheduleFormat("schedule holds no parameters".to_string()));
    }
    let tau = r
        .read_f64::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated safeguard step: {e}")))?;
    let r_stored = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated parameter count: {e}")))?
        as usize;
    if r_stored != parametrization.param_dim() {
        return Err(Error::ScheduleFormat(format!(
            "parameter count {r_stored} does not match parametrization ({} expected)",
            parametrization.param_dim()
        )));
    }
    let seed = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::ScheduleFormat(format!("truncated seed: {e}")))?;
    let config_hash = read_string(&mut r, "config hash")?;
    let dataset = read_string(&mut r, "dataset descriptor")?;

    let mut thetas = Vec::with_capacity(count);
    for t in 0..count {
        let mut params = Array1::zeros(r_stored);
        for v in params.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(|e| {
                Error::ScheduleFormat(format!("truncated payload at vector {t}: {e}"))
            })?;
        }
        thetas.push(
            ParamVector::new(parametrization.clone(), params)
                .map_err(|e| Error::ScheduleFormat(format!("invalid payload: {e}")))?,
        );
    }
    let mut trailing = [0_u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::ScheduleFormat(
            "trailing bytes after payload".to_string(),
        ));
    }
    PreconditionerSchedule::new(
        parametrization,
        thetas,
        tau,
        Provenance {
            config_hash,
            dataset,
            seed,
        },
    )
    .map_err(|e| Error::ScheduleFormat(format!("invalid schedule: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_schedule() -> PreconditionerSchedule {
        let p = Parametrization::Conv {
            h1: 3,
            h2: 3,
            m1: 4,
            m2: 5,
        };
        let thetas = (0..3)
            .map(|t| {
                let params = Array1::from_shape_fn(9, |i| (t * 9 + i) as f64 * 0.125 - 0.5);
                ParamVector::new(p.clone(), params).unwrap()
            })
            .collect();
        PreconditionerSchedule::new(
            p,
            thetas,
            0.925,
            Provenance {
                config_hash: "abc123".to_string(),
                dataset: "synthetic ones".to_string(),
                seed: 42,
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = std::env::temp_dir().join(format!("schedule-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.sched");
        let schedule = sample_schedule();
        write_schedule(&path, &schedule).unwrap();
        let back = read_schedule(&path).unwrap();
        assert_eq!(back.parametrization(), schedule.parametrization());
        assert_eq!(back.len(), schedule.len());
        assert_eq!(back.tau(), schedule.tau());
        assert_eq!(back.provenance(), schedule.provenance());
        for (a, b) in back.thetas().iter().zip(schedule.thetas()) {
            assert_eq!(a.params(), b.params());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = std::env::temp_dir().join(format!("schedule-io-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.sched");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_schedule(&path),
            Err(Error::ScheduleFormat(_))
        ));

        let good = dir.join("good.sched");
        write_schedule(&good, &sample_schedule()).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let truncated = dir.join("truncated.sched");
        std::fs::write(&truncated, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            read_schedule(&truncated),
            Err(Error::ScheduleFormat(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn scalar_schedules_round_trip() {
        let dir = std::env::temp_dir().join(format!("schedule-io-s-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scalar.sched");
        let thetas = vec![
            ParamVector::new(Parametrization::Scalar, array![0.5]).unwrap(),
            ParamVector::new(Parametrization::Scalar, array![1.5]).unwrap(),
        ];
        let schedule = PreconditionerSchedule::new(
            Parametrization::Scalar,
            thetas,
            0.5,
            Provenance::default(),
        )
        .unwrap();
        write_schedule(&path, &schedule).unwrap();
        let back = read_schedule(&path).unwrap();
        assert_eq!(back.theta(1).params()[0], 1.5);
        std::fs::remove_dir_all(&dir).ok();
    }
}
