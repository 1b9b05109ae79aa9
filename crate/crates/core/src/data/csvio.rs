//! CSV persistence. Empty fields are missing cells. Column metadata lives in
//! a `name=value` sidecar next to the data file (`<file>.meta`).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Cell, Column, ColumnMeta, Frame, HierIndex, Level, LongDataset, Role, WideDataset};
use crate::error::{Error, Result};

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn level_code(l: Level) -> &'static str {
    match l {
        Level::Occasion => "1",
        Level::Child => "2",
        Level::School => "3",
    }
}

fn encode_meta(m: &ColumnMeta) -> String {
    let mut s = format!("{},{},{}", m.role, level_code(m.level), m.wave_offset);
    if let Some(d) = &m.derivation {
        s.push(',');
        s.push_str(&d.to_string());
    }
    s
}

fn decode_meta(name: &str, value: &str, path: &Path) -> Result<ColumnMeta> {
    let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), message: format!("column `{name}`: {msg}") };
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() < 3 {
        return Err(bad("expected role,level,offset"));
    }
    let role: Role = parts[0].parse().map_err(|_| bad("unknown role"))?;
    let level = match parts[1] {
        "1" => Level::Occasion,
        "2" => Level::Child,
        "3" => Level::School,
        _ => return Err(bad("unknown level")),
    };
    let wave_offset: i8 = parts[2].parse().map_err(|_| bad("bad offset"))?;
    let derivation = match parts.get(3) {
        Some(d) => Some(d.parse().map_err(|_| bad("bad derivation"))?),
        None => None,
    };
    Ok(ColumnMeta { name: name.to_string(), role, level, wave_offset, derivation })
}

fn write_table(path: &Path, with_wave: bool, index: &[HierIndex], columns: &[Column]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["school".to_string(), "child".to_string()];
    if with_wave {
        header.push("wave".into());
    }
    header.extend(columns.iter().map(|c| c.meta.name.clone()));
    w.write_record(&header)?;
    for (r, h) in index.iter().enumerate() {
        let mut rec = vec![h.school.to_string(), h.child.to_string()];
        if with_wave {
            rec.push(h.wave.map(|x| x.to_string()).unwrap_or_default());
        }
        for c in columns {
            rec.push(c.values[r].map(|x| format!("{x:?}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

struct Table {
    index: Vec<HierIndex>,
    names: Vec<String>,
    values: Vec<Vec<Cell>>,
}

fn read_table(path: &Path, with_wave: bool) -> Result<Table> {
    let perr = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n_id = if with_wave { 3 } else { 2 };
    if header.len() < n_id || header[0] != "school" || header[1] != "child" || (with_wave && header[2] != "wave") {
        return Err(perr("missing index columns".into()));
    }
    let names = header[n_id..].to_vec();
    let mut values: Vec<Vec<Cell>> = vec![Vec::new(); names.len()];
    let mut index = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let school = field(0).parse().map_err(|_| perr(format!("row {line}: bad school id")))?;
        let child = field(1).parse().map_err(|_| perr(format!("row {line}: bad child id")))?;
        let wave = if with_wave {
            Some(field(2).parse().map_err(|_| perr(format!("row {line}: bad wave")))?)
        } else {
            None
        };
        index.push(HierIndex { school, child, wave });
        for (k, col) in values.iter_mut().enumerate() {
            let s = field(n_id + k);
            col.push(if s.is_empty() {
                None
            } else {
                Some(s.parse().map_err(|_| perr(format!("row {line}: bad number `{s}`")))?)
            });
        }
    }
    Ok(Table { index, names, values })
}

fn read_sidecar(path: &Path) -> Result<HashMap<String, String>> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side)?;
    let mut out = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { path: side.clone(), message: format!("expected name=value: `{line}`") })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn column_metas(path: &Path, names: &[String], meta: &HashMap<String, String>) -> Result<Vec<ColumnMeta>> {
    names
        .iter()
        .map(|n| {
            let v = meta.get(&format!("column.{n}")).ok_or_else(|| Error::Parse {
                path: sidecar(path),
                message: format!("no metadata for column `{n}`"),
            })?;
            decode_meta(n, v, path)
        })
        .collect()
}

pub fn write_long(path: &Path, data: &LongDataset) -> Result<()> {
    write_table(path, true, data.index(), data.columns())?;
    let mut side = String::from("layout=long\n");
    for c in data.columns() {
        side.push_str(&format!("column.{}={}\n", c.meta.name, encode_meta(&c.meta)));
    }
    fs::write(sidecar(path), side)?;
    Ok(())
}

pub fn read_long(path: &Path) -> Result<LongDataset> {
    let t = read_table(path, true)?;
    let meta = read_sidecar(path)?;
    let metas = column_metas(path, &t.names, &meta)?;
    let columns = metas.into_iter().zip(t.values).map(|(m, v)| Column::new(m, v)).collect();
    LongDataset::new(t.index, columns)
}

pub fn write_wide(path: &Path, data: &WideDataset) -> Result<()> {
    write_table(path, false, data.index(), data.columns())?;
    let waves: Vec<String> = data.waves().iter().map(u8::to_string).collect();
    let mut side = format!("layout=wide\nwaves={}\n", waves.join(","));
    let tv: Vec<&str> = data.time_varying().iter().map(|m| m.name.as_str()).collect();
    side.push_str(&format!("time_varying={}\n", tv.join(",")));
    for m in data.time_varying() {
        side.push_str(&format!("base.{}={}\n", m.name, encode_meta(m)));
    }
    for c in data.columns() {
        side.push_str(&format!("column.{}={}\n", c.meta.name, encode_meta(&c.meta)));
    }
    fs::write(sidecar(path), side)?;
    Ok(())
}

pub fn read_wide(path: &Path) -> Result<WideDataset> {
    let t = read_table(path, false)?;
    let meta = read_sidecar(path)?;
    let perr = |message: String| Error::Parse { path: sidecar(path), message };
    let waves = meta
        .get("waves")
        .ok_or_else(|| perr("missing `waves`".into()))?
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u8>().map_err(|_| perr(format!("bad wave `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let mut time_varying = Vec::new();
    for base in meta.get("time_varying").map(String::as_str).unwrap_or("").split(',') {
        let base = base.trim();
        if base.is_empty() {
            continue;
        }
        let v = meta.get(&format!("base.{base}")).ok_or_else(|| perr(format!("no metadata for `{base}`")))?;
        time_varying.push(decode_meta(base, v, path)?);
    }
    let metas = column_metas(path, &t.names, &meta)?;
    let columns = metas.into_iter().zip(t.values).map(|(m, v)| Column::new(m, v)).collect();
    WideDataset::new(t.index, columns, waves, time_varying)
}
