//! Download and checksum verification of the publicly available datasets.

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

const CHECKSUMS: &str = include_str!("../../../datasets/checksums.txt");
const LOCK_FILE: &str = "checksums.lock";

const CA_URL: &str = "https://ndownloader.figshare.com/files/5976036";
const INSURANCE_URL: &str =
    "https://raw.githubusercontent.com/stedy/Machine-Learning-with-R-datasets/master/insurance.csv";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("download of {url} failed: {reason}")]
    Download { url: String, reason: String },

    #[error("checksum mismatch for {name}: expected {expected}, got {actual}")]
    Checksum {
        name: String,
        expected: String,
        actual: String,
    },

    #[error("unknown dataset '{0}' (fetchable: california_housing, insurance)")]
    Unknown(String),

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const FETCHABLE: [&str; 2] = ["california_housing", "insurance"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// `name → sha256` from the registry, `None` for entries still "unknown".
pub fn registry_checksums() -> BTreeMap<String, Option<String>> {
    CHECKSUMS
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            (parts.len() == 3).then(|| {
                let sum = (parts[2] != "unknown").then(|| parts[2].to_string());
                (parts[0].to_string(), sum)
            })
        })
        .collect()
}

fn read_lock(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(dir.join(LOCK_FILE))
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once(' ').map(|(a, b)| (a.to_string(), b.trim().to_string())))
        .collect()
}

fn write_lock(dir: &Path, lock: &BTreeMap<String, String>) -> std::io::Result<()> {
    let body: String = lock.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
    std::fs::write(dir.join(LOCK_FILE), body)
}

/// Checks `bytes` against the registry; entries without a registered sum
/// are pinned in the data directory's lock file on first download.
pub fn verify(name: &str, bytes: &[u8], registered: Option<&str>, data_dir: &Path) -> Result<(), FetchError> {
    let actual = sha256_hex(bytes);
    let mut lock = read_lock(data_dir);
    let expected = registered.map(str::to_string).or_else(|| lock.get(name).cloned());
    match expected {
        Some(e) if e != actual => Err(FetchError::Checksum {
            name: name.into(),
            expected: e,
            actual,
        }),
        Some(_) => Ok(()),
        None => {
            log::warn!("{name}: no registered checksum, pinning {actual}");
            lock.insert(name.into(), actual);
            write_lock(data_dir, &lock)?;
            Ok(())
        }
    }
}

fn download(url: &str) -> Result<Vec<u8>, FetchError> {
    let err = |reason: String| FetchError::Download {
        url: url.into(),
        reason,
    };
    let mut resp = ureq::get(url).call().map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    resp.body_mut()
        .as_reader()
        .read_to_end(&mut out)
        .map_err(|e| err(e.to_string()))?;
    Ok(out)
}

/// Converts the census archive to the familiar eight-feature table with the
/// median house value in units of 100,000.
pub fn convert_cal_housing(tgz: &[u8]) -> Result<String, FetchError> {
    let mut archive = tar::Archive::new(GzDecoder::new(tgz));
    let mut raw = None;
    for entry in archive.entries()? {
        let mut entry = entry?;
        let is_data = entry.path()?.to_string_lossy().ends_with("cal_housing.data");
        if is_data {
            let mut s = String::new();
            entry.read_to_string(&mut s)?;
            raw = Some(s);
            break;
        }
    }
    let raw = raw.ok_or_else(|| FetchError::Archive("cal_housing.data not found".into()))?;
    let mut out =
        String::from("MedInc,HouseAge,AveRooms,AveBedrms,Population,AveOccup,Latitude,Longitude,MedHouseVal\n");
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| FetchError::Archive(format!("line {}: {e}", i + 1)))?;
        if v.len() != 9 {
            return Err(FetchError::Archive(format!("line {}: {} fields", i + 1, v.len())));
        }
        // longitude, latitude, age, rooms, bedrooms, population, households, income, value
        let households = v[6];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            v[7],
            v[2],
            v[3] / households,
            v[4] / households,
            v[5],
            v[5] / households,
            v[1],
            v[0],
            v[8] / 100_000.0
        ));
    }
    Ok(out)
}

/// Downloads `name` into `data_dir`, returning the written file.
pub fn fetch(name: &str, data_dir: &Path) -> Result<std::path::PathBuf, FetchError> {
    std::fs::create_dir_all(data_dir)?;
    let sums = registry_checksums();
    let registered = sums.get(name).cloned().flatten();
    let (file, body) = match name {
        "california_housing" => {
            let bytes = download(CA_URL)?;
            verify(name, &bytes, registered.as_deref(), data_dir)?;
            ("california_housing.csv", convert_cal_housing(&bytes)?.into_bytes())
        }
        "insurance" => {
            let bytes = download(INSURANCE_URL)?;
            verify(name, &bytes, registered.as_deref(), data_dir)?;
            ("insurance.csv", bytes)
        }
        other => return Err(FetchError::Unknown(other.into())),
    };
    let dest = data_dir.join(file);
    let tmp = data_dir.join(format!(".{file}.tmp"));
    std::fs::write(&tmp, body)?;
    std::fs::rename(&tmp, &dest)?;
    Ok(dest)
}
