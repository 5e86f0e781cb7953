//! Per-tick CSV trajectory logs.

use std::collections::HashMap;
use std::io::{Read, Write};

use wheelleg_core::kinematics::{NUM_JOINTS, NUM_LEGS};
use wheelleg_core::scenario::{LogRow, Trajectory};

use crate::error::CliError;

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "x_c", "z_c", "theta", "dx_c", "dz_c", "omega"].iter().map(|s| s.to_string()).collect();
    h.extend((0..NUM_JOINTS).map(|i| format!("q{i}")));
    h.extend((0..NUM_JOINTS).map(|i| format!("dq{i}")));
    h.extend((0..NUM_LEGS).map(|i| format!("w_wheel{i}")));
    for i in 0..NUM_LEGS {
        h.push(format!("fx{i}"));
        h.push(format!("fz{i}"));
    }
    h.extend((0..NUM_JOINTS + NUM_LEGS).map(|i| format!("tau{i}")));
    h.push("seg_index".into());
    h.push("status".into());
    h.push("theta_des".into());
    h.extend((0..NUM_JOINTS).map(|i| format!("q_des{i}")));
    h.extend(["t_hat1", "t_hat2", "seg_progress", "cloud_penetration"].iter().map(|s| s.to_string()));
    h
}

fn record(r: &LogRow) -> Vec<String> {
    let s = &r.state;
    let mut v: Vec<String> = [r.t, s.x, s.z, s.theta, s.dx, s.dz, s.omega].iter().map(f64::to_string).collect();
    v.extend(s.q.iter().chain(&s.dq).chain(&s.w_wheel).map(f64::to_string));
    for f in &r.contact_force {
        v.push(f.x.to_string());
        v.push(f.y.to_string());
    }
    v.extend(r.tau.iter().map(f64::to_string));
    v.push(r.plan.segment.to_string());
    v.push(r.status.as_str().to_string());
    v.push(r.theta_des.to_string());
    v.extend(r.q_des.iter().map(f64::to_string));
    v.extend([r.plan.t_hat1, r.plan.t_hat2, r.plan.progress, r.cloud_penetration].iter().map(f64::to_string));
    v
}

/// Writes one row per control tick. Floats use shortest round-trip formatting, so identical runs give identical bytes.
pub fn write_csv<W: Write>(tr: &Trajectory, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::Csv(e.to_string());
    w.write_record(header()).map_err(err)?;
    for r in &tr.rows {
        w.write_record(record(r)).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.to_string()))
}

/// Numeric columns of a log, keyed by header name.
#[derive(Debug, Clone, Default)]
pub struct LogTable {
    pub columns: HashMap<String, Vec<f64>>,
    pub status: Vec<String>,
    pub rows: usize,
}

impl LogTable {
    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| CliError::Csv(format!("missing column {name}")))
    }
}

pub fn read_csv<R: Read>(input: R) -> Result<LogTable, CliError> {
    let mut rd = csv::Reader::from_reader(input);
    let names: Vec<String> = rd.headers().map_err(|e| CliError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    if names.iter().all(|n| n.is_empty()) {
        return Err(CliError::Csv("no header".into()));
    }
    let mut table = LogTable::default();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Csv(e.to_string()))?;
        for (i, field) in rec.iter().enumerate() {
            if names[i] == "status" {
                table.status.push(field.to_string());
            } else {
                let v = field.parse::<f64>().map_err(|_| CliError::Csv(format!("row {}: column {} holds {field:?}", line + 2, names[i])))?;
                cols[i].push(v);
            }
        }
        table.rows += 1;
    }
    if table.rows == 0 {
        return Err(CliError::Csv("no data rows".into()));
    }
    table.columns = names.into_iter().zip(cols).filter(|(n, _)| n != "status").collect();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_carries_every_logged_quantity() {
        let h = header();
        assert_eq!(h.len(), 7 + 8 + 8 + 4 + 8 + 12 + 2 + 1 + 8 + 4);
        assert_eq!(h[..3], ["t", "x_c", "z_c"]);
        assert!(h.contains(&"tau11".to_string()) && h.contains(&"seg_index".to_string()));
    }

    #[test]
    fn rejects_empty_and_ragged_input() {
        assert!(matches!(read_csv("".as_bytes()), Err(CliError::Csv(_))));
        assert!(matches!(read_csv("t,theta\n".as_bytes()), Err(CliError::Csv(_))));
        assert!(matches!(read_csv("t,theta\n0,1\n0.1\n".as_bytes()), Err(CliError::Csv(_))));
        assert!(matches!(read_csv("t,theta\n0,abc\n".as_bytes()), Err(CliError::Csv(_))));
        let t = read_csv("t,theta,status\n0,1,running\n0.5,2,completed\n".as_bytes()).unwrap();
        assert_eq!(t.column("theta").unwrap(), [1.0, 2.0]);
        assert_eq!(t.status, ["running", "completed"]);
    }

    proptest::proptest! {
        #[test]
        fn shortest_float_text_reads_back_exactly(rows in proptest::collection::vec(proptest::array::uniform3(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO), 1..20)) {
            let mut text = String::from("t,a,b\n");
            for r in &rows {
                text += &format!("{},{},{}\n", r[0], r[1], r[2]);
            }
            let t = read_csv(text.as_bytes()).unwrap();
            for (k, name) in ["t", "a", "b"].iter().enumerate() {
                let col = t.column(name).unwrap();
                for (i, r) in rows.iter().enumerate() {
                    proptest::prop_assert_eq!(col[i].to_bits(), r[k].to_bits());
                }
            }
        }
    }
}
