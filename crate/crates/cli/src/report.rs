//! Collects versioned CSV outputs into one JSON document plus whitespace
//! separated data blocks that gnuplot reads with `index`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use evidar_core::CSV_SCHEMA_VERSION;
use serde_json::{Map, Value};

use crate::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const STEP_DAT: &str = "step_curves.dat";
pub const LEVEL_DAT: &str = "levels.dat";
pub const NOISE_DAT: &str = "noise.dat";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Parses `# schema: <name> v<version>`, a header line and comma separated
/// rows.
pub fn parse_csv(text: &str) -> Result<Table, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or("empty file")?;
    let spec = first
        .strip_prefix("# schema:")
        .ok_or("missing '# schema:' line")?
        .trim();
    let (schema, version) = spec.rsplit_once(' ').ok_or("malformed schema line")?;
    let version: u32 = version
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("malformed schema version '{version}'"))?;
    let columns: Vec<String> = lines.next().ok_or("missing header")?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != columns.len() {
            return Err(format!("row {} has {} fields, header has {}", i + 1, row.len(), columns.len()));
        }
        rows.push(row);
    }
    Ok(Table {
        schema: schema.trim().to_string(),
        version,
        columns,
        rows,
    })
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_csvs(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn cell(v: &str) -> Value {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null),
        Ok(_) => Value::Null,
        Err(_) => Value::String(v.to_string()),
    }
}

type Sourced<'a> = (&'a str, &'a Table);

fn step_blocks(tables: &[Sourced]) -> String {
    let mut out = String::from("# step success u_fused u_prefuse\n");
    for (source, t) in tables {
        let (Some(a), Some(f), Some(s), Some(st), Some(ok), Some(uf), Some(up)) = (
            t.col("agent"),
            t.col("fusion"),
            t.col("sigma"),
            t.col("step"),
            t.col("success"),
            t.col("mean_u_fused"),
            t.col("mean_u_prefuse"),
        ) else {
            continue;
        };
        let mut blocks: BTreeMap<(String, String, String), Vec<&Vec<String>>> = BTreeMap::new();
        for r in &t.rows {
            blocks.entry((r[a].clone(), r[f].clone(), r[s].clone())).or_default().push(r);
        }
        for ((agent, fusion, sigma), rows) in blocks {
            let _ = writeln!(out, "\n\n# source={source} agent={agent} fusion={fusion} sigma={sigma}");
            for r in rows {
                let _ = writeln!(out, "{} {} {} {}", r[st], r[ok], r[uf], r[up]);
            }
        }
    }
    out
}

fn eval_blocks(tables: &[Sourced], per_level: bool) -> String {
    let mut out = if per_level {
        String::from("# level_index level top1 top3 mean_u\n")
    } else {
        String::from("# sigma top1 top3 mean_u\n")
    };
    for (source, t) in tables {
        let (Some(a), Some(f), Some(s), Some(l), Some(t1), Some(t3), Some(u)) = (
            t.col("agent"),
            t.col("fusion"),
            t.col("sigma"),
            t.col("level"),
            t.col("top1"),
            t.col("top3"),
            t.col("mean_u"),
        ) else {
            continue;
        };
        let mut blocks: BTreeMap<Vec<String>, Vec<&Vec<String>>> = BTreeMap::new();
        for r in &t.rows {
            let overall = r[l] == "overall";
            if per_level == overall {
                continue;
            }
            let key = if per_level {
                vec![r[a].clone(), r[f].clone(), r[s].clone()]
            } else {
                vec![r[a].clone(), r[f].clone()]
            };
            blocks.entry(key).or_default().push(r);
        }
        for (key, mut rows) in blocks {
            let label = if per_level {
                format!("agent={} fusion={} sigma={}", key[0], key[1], key[2])
            } else {
                format!("agent={} fusion={}", key[0], key[1])
            };
            let _ = writeln!(out, "\n\n# source={source} {label}");
            if !per_level {
                rows.sort_by(|x, y| {
                    let p = |v: &str| v.parse::<f64>().unwrap_or(f64::NAN);
                    p(&x[s]).total_cmp(&p(&y[s]))
                });
            }
            for (i, r) in rows.iter().enumerate() {
                if per_level {
                    let _ = writeln!(out, "{i} {} {} {} {}", r[l], r[t1], r[t3], r[u]);
                } else {
                    let _ = writeln!(out, "{} {} {} {}", r[s], r[t1], r[t3], r[u]);
                }
            }
        }
    }
    out
}

fn generic_blocks(tables: &[Sourced]) -> String {
    let mut out = String::new();
    for (i, (source, t)) in tables.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# source={source}\n# {}", t.columns.join(" "));
        for r in &t.rows {
            let _ = writeln!(out, "{}", r.join(" "));
        }
    }
    out
}

pub fn report(input: &Path, out: &Path) -> Result<(), CliError> {
    if !input.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", input.display())));
    }
    let mut paths = Vec::new();
    collect_csvs(input, &mut paths).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;

    let mut tables: Vec<(String, Table)> = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        let table = parse_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        if table.version != CSV_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "{}: schema '{}' is version {}, this build reads version {CSV_SCHEMA_VERSION}",
                p.display(),
                table.schema,
                table.version
            )));
        }
        let rel = p.strip_prefix(input).unwrap_or(p).to_string_lossy().replace('\\', "/");
        tables.push((rel, table));
    }
    if tables.is_empty() {
        eprintln!("warning: no CSV files under {}; writing an empty report", input.display());
    }

    let mut by_schema: BTreeMap<&str, Vec<Sourced>> = BTreeMap::new();
    for (source, t) in &tables {
        by_schema.entry(t.schema.as_str()).or_default().push((source.as_str(), t));
    }
    let mut json_tables = Map::new();
    for (schema, group) in &by_schema {
        let rows: Vec<Value> = group
            .iter()
            .flat_map(|(source, t)| {
                t.rows.iter().map(move |r| {
                    let mut obj = Map::new();
                    obj.insert("source".into(), Value::String(source.to_string()));
                    for (c, v) in t.columns.iter().zip(r) {
                        obj.insert(c.clone(), cell(v));
                    }
                    Value::Object(obj)
                })
            })
            .collect();
        json_tables.insert(schema.to_string(), Value::Array(rows));
    }
    let doc = serde_json::json!({
        "schema_version": CSV_SCHEMA_VERSION,
        "sources": tables.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(),
        "tables": json_tables,
    });

    fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    write(REPORT_FILE, format!("{doc:#}\n"))?;
    let empty = Vec::new();
    write(STEP_DAT, step_blocks(by_schema.get("step-curve").unwrap_or(&empty)))?;
    let evals = by_schema.get("evaluation").unwrap_or(&empty);
    write(LEVEL_DAT, eval_blocks(evals, true))?;
    write(NOISE_DAT, eval_blocks(evals, false))?;
    for (schema, group) in &by_schema {
        if !matches!(*schema, "step-curve" | "evaluation") {
            write(&format!("{schema}.dat"), generic_blocks(group))?;
        }
    }
    eprintln!("report: {} tables from {} files", by_schema.len(), tables.len());
    Ok(())
}
