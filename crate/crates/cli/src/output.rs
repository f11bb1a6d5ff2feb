use std::io::Write;
use std::path::{Path, PathBuf};

use cohentropy::thermo::{Flags, ThermoSnapshot};

pub const CSV_HEADER: &str =
    "t,S,C_v,C_h,D_th,E_S,F_D,Pi_rate,Phi_rate,rate_C_v,rate_C_h,rate_D_th,flags";

/// 17 significant digits in scientific notation.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn csv_row(s: &ThermoSnapshot, extra: Flags) -> String {
    let mut flags = s.flags;
    flags.insert(extra);
    let cols = [
        s.t, s.s, s.c_v, s.c_h, s.d_th, s.e_s, s.f_d, s.pi_rate, s.phi_rate, s.rate_c_v,
        s.rate_c_h, s.rate_d_th,
    ];
    let mut line: Vec<String> = cols.iter().map(|&x| num(x)).collect();
    line.push(flags.to_string());
    line.join(",")
}

pub fn series_csv<'a>(snaps: impl IntoIterator<Item = &'a ThermoSnapshot>, extra: Flags) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in snaps {
        out.push_str(&csv_row(s, extra));
        out.push('\n');
    }
    out
}

/// Writes every file to a temporary sibling first and renames them only
/// once all contents are ready.
pub fn write_all(files: &[(PathBuf, String)]) -> std::io::Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, body) in files {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(body.as_bytes())?;
        tmp.flush()?;
        staged.push((tmp, path.clone()));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| e.error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
