//! Model checkpoints: a short text header terminated by `end`, followed by
//! the parameters as raw little-endian `f64` in tensor order.
//!
//! ```text
//! wvn-checkpoint 1
//! embedding_dim 90
//! hidden 256 32
//! step 1200
//! mode full
//! tau_thr 0.4321
//! mu_pos 0.012
//! sigma_pos 0.004
//! k_sigma 2
//! n_trav 96
//! params 32331
//! end
//! ```

use std::io::{BufRead, Read, Write};

use super::{ConfidenceStats, MlpModel, Mode, Predictor};
use crate::error::{Error, Result};

const FORMAT: &str = "checkpoint";
const MAGIC: &str = "wvn-checkpoint 1";
const MAX_HEADER_LINE: u64 = 4096;
const MAX_WIDTH: usize = 1 << 16;
const MAX_PARAMS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub predictor: Predictor,
    pub step: u64,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let p = &ckpt.predictor;
    let hidden: Vec<String> = p.model.hidden_sizes().iter().map(usize::to_string).collect();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "embedding_dim {}", p.model.embedding_dim())?;
    writeln!(w, "hidden {}", hidden.join(" "))?;
    writeln!(w, "step {}", ckpt.step)?;
    writeln!(w, "mode {}", p.mode.name())?;
    // `{:?}` on f64 round-trips exactly.
    writeln!(w, "tau_thr {:?}", p.tau_thr)?;
    writeln!(w, "mu_pos {:?}", p.stats.mu_pos)?;
    writeln!(w, "sigma_pos {:?}", p.stats.sigma_pos)?;
    writeln!(w, "k_sigma {:?}", p.stats.k_sigma)?;
    writeln!(w, "n_trav {}", p.stats.n_trav)?;
    writeln!(w, "params {}", p.model.param_count())?;
    writeln!(w, "end")?;
    for t in p.model.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Header {
    embedding_dim: Option<usize>,
    hidden: Option<Vec<usize>>,
    step: Option<u64>,
    mode: Option<Mode>,
    tau_thr: Option<f64>,
    mu_pos: Option<f64>,
    sigma_pos: Option<f64>,
    k_sigma: Option<f64>,
    n_trav: Option<usize>,
    params: Option<usize>,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::format(FORMAT, format!("bad value for {key}: {v:?}")))
}

fn finite(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(Error::format(FORMAT, format!("{key} must be finite")));
    }
    Ok(x)
}

fn set<T>(slot: &mut Option<T>, key: &str, v: T) -> Result<()> {
    if slot.replace(v).is_some() {
        return Err(Error::format(FORMAT, format!("duplicate key {key}")));
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Checkpoint> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = r.by_ref().take(MAX_HEADER_LINE).read_line(line)?;
        if n == 0 {
            return Err(Error::format(FORMAT, "truncated header"));
        }
        if !line.ends_with('\n') {
            return Err(Error::format(FORMAT, "header line too long or unterminated"));
        }
        Ok(())
    };
    read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::format(FORMAT, "bad magic line"));
    }
    let mut h = Header::default();
    loop {
        read_line(&mut line)?;
        let text = line.trim_end();
        if text == "end" {
            break;
        }
        let (key, value) = text.split_once(' ').ok_or_else(|| Error::format(FORMAT, format!("bad line {text:?}")))?;
        match key {
            "embedding_dim" => set(&mut h.embedding_dim, key, num(key, value)?)?,
            "hidden" => {
                let sizes = value.split(' ').map(|v| num(key, v)).collect::<Result<Vec<usize>>>()?;
                set(&mut h.hidden, key, sizes)?
            }
            "step" => set(&mut h.step, key, num(key, value)?)?,
            "mode" => {
                let mode = match value {
                    "full" => Mode::Full,
                    "trav" => Mode::Trav,
                    "fixed" => Mode::Fixed,
                    "anom" => Mode::Anom,
                    other => return Err(Error::format(FORMAT, format!("unknown mode {other:?}"))),
                };
                set(&mut h.mode, key, mode)?
            }
            "tau_thr" => set(&mut h.tau_thr, key, finite(key, value)?)?,
            "mu_pos" => set(&mut h.mu_pos, key, finite(key, value)?)?,
            "sigma_pos" => set(&mut h.sigma_pos, key, finite(key, value)?)?,
            "k_sigma" => set(&mut h.k_sigma, key, finite(key, value)?)?,
            "n_trav" => set(&mut h.n_trav, key, num(key, value)?)?,
            "params" => set(&mut h.params, key, num(key, value)?)?,
            other => return Err(Error::format(FORMAT, format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::format(FORMAT, format!("missing key {k}"));
    let dim = h.embedding_dim.ok_or_else(|| missing("embedding_dim"))?;
    let hidden = h.hidden.ok_or_else(|| missing("hidden"))?;
    let params = h.params.ok_or_else(|| missing("params"))?;
    if dim > MAX_WIDTH || hidden.iter().any(|&w| w > MAX_WIDTH) || hidden.len() > 16 {
        return Err(Error::format(FORMAT, "layer sizes too large"));
    }
    let mut model = MlpModel::zeros(dim, &hidden).map_err(|e| Error::format(FORMAT, e.to_string()))?;
    let expected = model.param_count();
    if params != expected || expected > MAX_PARAMS {
        return Err(Error::format(FORMAT, format!("params {params} does not match layer shapes ({expected})")));
    }
    let mut bytes = Vec::with_capacity(expected * 8);
    r.by_ref().take(expected as u64 * 8).read_to_end(&mut bytes)?;
    if bytes.len() != expected * 8 {
        return Err(Error::format(FORMAT, "truncated parameter block"));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(FORMAT, "trailing bytes after parameters"));
    }
    let flat: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(Error::format(FORMAT, "non-finite parameter"));
    }
    model.set_flat_params(&flat)?;
    let sigma_pos = h.sigma_pos.ok_or_else(|| missing("sigma_pos"))?;
    let k_sigma = h.k_sigma.ok_or_else(|| missing("k_sigma"))?;
    if !(sigma_pos > 0.0 && k_sigma > 0.0) {
        return Err(Error::format(FORMAT, "sigma_pos and k_sigma must be positive"));
    }
    let stats = ConfidenceStats {
        mu_pos: h.mu_pos.ok_or_else(|| missing("mu_pos"))?,
        sigma_pos,
        k_sigma,
        n_trav: h.n_trav.unwrap_or(0),
    };
    Ok(Checkpoint {
        predictor: Predictor {
            model,
            stats,
            tau_thr: h.tau_thr.ok_or_else(|| missing("tau_thr"))?,
            mode: h.mode.unwrap_or_default(),
        },
        step: h.step.ok_or_else(|| missing("step"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::xavier(5, &[6, 3], &mut rng).unwrap();
        Checkpoint {
            predictor: Predictor {
                model,
                stats: ConfidenceStats { mu_pos: 0.1 / 3.0, sigma_pos: 1e-6, k_sigma: 2.0, n_trav: 12 },
                tau_thr: 0.1 + 0.2,
                mode: Mode::Anom,
            },
            step: 77,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        let mut truncated = buf.clone();
        truncated.pop();
        assert!(read_checkpoint(truncated.as_slice()).is_err());
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_checkpoint(trailing.as_slice()).is_err());
        let split = buf.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        let header = String::from_utf8(buf[..split].to_vec()).unwrap().replace("hidden 6 3", "hidden 6 4");
        let reshaped = [header.as_bytes(), &buf[split..]].concat();
        assert!(read_checkpoint(reshaped.as_slice()).is_err());
        assert!(read_checkpoint(&b"wvn-checkpoint 2\nend\n"[..]).is_err());
        assert!(read_checkpoint(&b""[..]).is_err());
    }
}
