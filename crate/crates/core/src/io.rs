//! Trace CSV reading and writing.
//!
//! Layout: `t,<named inputs...>,<observable states...>[,hidden_<state>...]`,
//! one row per sample. The input on the last row is never used by a simulation
//! and is written as whatever the signal holds there (0 when absent).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ode::{InputSignal, LinearOdeSystem, Segment, Trajectory};

pub const HIDDEN_PREFIX: &str = "hidden_";

fn fmt(v: f64) -> String {
    // `{}` prints the shortest string that round-trips, which keeps output stable.
    format!("{}", v + 0.0)
}

pub fn write_trace_csv<W: Write>(w: W, sys: &LinearOdeSystem, seg: &Segment, include_hidden: bool) -> Result<()> {
    let traj = &seg.trajectory;
    if traj.n() != sys.n() {
        return Err(Error::LengthMismatch { what: "trajectory channels", expected: sys.n(), found: traj.n() });
    }
    let mut out = csv::Writer::from_writer(w);
    let named_inputs: Vec<(usize, &String)> =
        sys.input_names().iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|n| (i, n))).collect();
    let obs = sys.observable_indices();
    let hidden: Vec<usize> = if include_hidden { (0..sys.n()).filter(|i| !obs.contains(i)).collect() } else { vec![] };

    let mut header = vec!["t".to_string()];
    header.extend(named_inputs.iter().map(|(_, n)| n.to_string()));
    header.extend(obs.iter().map(|&i| sys.state_names()[i].clone()));
    header.extend(hidden.iter().map(|&i| format!("{HIDDEN_PREFIX}{}", sys.state_names()[i])));
    out.write_record(&header)?;

    let mut row = Vec::with_capacity(header.len());
    for k in 0..traj.len() {
        row.clear();
        row.push(fmt(traj.t0() + traj.tau() * k as f64));
        for &(i, _) in &named_inputs {
            let v = seg.input.channel(i).get(k).copied().unwrap_or(0.0);
            row.push(fmt(v));
        }
        for &i in obs.iter().chain(&hidden) {
            row.push(fmt(traj.channel(i)[k]));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a trace written by [`write_trace_csv`] (or by a real logger using the
/// same header). Missing hidden columns are filled with `fill_hidden[i]`.
pub fn read_trace_csv<R: Read>(r: R, sys: &LinearOdeSystem, fill_hidden: &[f64]) -> Result<Segment> {
    let n = sys.n();
    if fill_hidden.len() != n {
        return Err(Error::LengthMismatch { what: "hidden fill values", expected: n, found: fill_hidden.len() });
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let t_col = col("t").ok_or_else(|| Error::invalid("trace CSV has no `t` column"))?;
    let mut input_cols = vec![None; n];
    for (i, name) in sys.input_names().iter().enumerate() {
        if let Some(name) = name {
            input_cols[i] =
                Some(col(name).ok_or_else(|| Error::invalid(format!("trace CSV lacks input column `{name}`")))?);
        }
    }
    let mut state_cols = vec![None; n];
    for (i, name) in sys.state_names().iter().enumerate() {
        state_cols[i] = if sys.beta_diag()[i] {
            Some(col(name).ok_or_else(|| Error::invalid(format!("trace CSV lacks state column `{name}`")))?)
        } else {
            col(&format!("{HIDDEN_PREFIX}{name}")).or_else(|| col(name))
        };
    }

    let mut times = Vec::new();
    let mut inputs = vec![Vec::new(); n];
    let mut states = vec![Vec::new(); n];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::invalid(format!("row {}: cannot parse `{s}` as a number", line + 2)))
        };
        times.push(get(t_col)?);
        for i in 0..n {
            inputs[i].push(match input_cols[i] {
                Some(c) => get(c)?,
                None => 0.0,
            });
            states[i].push(match state_cols[i] {
                Some(c) => get(c)?,
                None => fill_hidden[i],
            });
        }
    }
    if times.len() < 2 {
        return Err(Error::invalid("trace CSV needs at least two rows"));
    }
    let tau = times[1] - times[0];
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - tau).abs() > 1e-6 * tau.abs().max(1e-12) {
            return Err(Error::invalid(format!("non-uniform sampling at row {}", k + 3)));
        }
    }
    let input = InputSignal::new(tau, inputs)?;
    let trajectory = Trajectory::new(tau, times[0], states)?;
    Segment::new(input, trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> LinearOdeSystem {
        LinearOdeSystem::new(
            vec!["h".into(), "y".into()],
            vec![Some("u".into()), None],
            vec![-1.0, 0.0, 1.0, -1.0],
            vec![1.0, 0.0],
            vec![false, true],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_with_hidden() {
        let s = sys();
        let u = InputSignal::new(0.25, vec![vec![1.0, 0.5, 0.1], vec![0.0; 3]]).unwrap();
        let traj = crate::ode::simulate_euler(&s, &u, &[0.0, 1.0], 3).unwrap();
        let seg = Segment::new(u, traj).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &s, &seg, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u,y,hidden_h\n"));
        let back = read_trace_csv(&buf[..], &s, &[0.0, 0.0]).unwrap();
        assert_eq!(back.trajectory, seg.trajectory);
        assert_eq!(&back.input.channel(0)[..3], seg.input.channel(0));
    }

    #[test]
    fn hidden_columns_optional() {
        let s = sys();
        let csv = "t,u,y\n0,1,2\n1,0,3\n";
        let seg = read_trace_csv(csv.as_bytes(), &s, &[7.0, 0.0]).unwrap();
        assert_eq!(seg.trajectory.channel(0), &[7.0, 7.0]);
        assert_eq!(seg.trajectory.channel(1), &[2.0, 3.0]);
        assert_eq!(seg.tau(), 1.0);
    }

    #[test]
    fn missing_observable_column_is_an_error() {
        let s = sys();
        assert!(read_trace_csv("t,u\n0,1\n1,1\n".as_bytes(), &s, &[0.0, 0.0]).is_err());
        assert!(read_trace_csv("t,u,y\n0,1,x\n1,1,2\n".as_bytes(), &s, &[0.0, 0.0]).is_err());
    }
}
