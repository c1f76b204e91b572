//! Versioned text checkpoints.
//!
//! ```text
//! batchsim-checkpoint 1
//! algorithm dqn
//! epsilon 0.6057704364907278
//! hp learning_rate 0.001
//! ...
//! layers 17 64 64 6
//! params 5702
//! <one parameter per line>
//! ```
//!
//! Parameters are written with the shortest representation that parses back
//! to the same bits, so a restored network reproduces outputs exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::hyper::Hyperparameters;
use super::nn::{Layer, NeuralNet};
use crate::error::{Result, SimError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "batchsim-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dqn,
    Pg,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Pg => "pg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub hp: Hyperparameters,
    pub net: NeuralNet,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(s, "algorithm {}", self.algorithm.as_str()).unwrap();
        writeln!(s, "epsilon {}", self.epsilon).unwrap();
        for (k, v) in self.hp.fields() {
            writeln!(s, "hp {k} {v}").unwrap();
        }
        let dims: Vec<String> = self.net.sizes().iter().map(|d| d.to_string()).collect();
        writeln!(s, "layers {}", dims.join(" ")).unwrap();
        writeln!(s, "params {}", self.net.num_params()).unwrap();
        for p in self.net.params() {
            writeln!(s, "{p}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |m: String| SimError::Checkpoint(m);
        let mut lines = text.lines();
        let mut header = |what: &str| -> Result<Vec<&str>> {
            let line = lines.next().ok_or_else(|| err(format!("truncated before {what}")))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.first() != Some(&what) {
                return Err(err(format!("expected {what:?} line, found {line:?}")));
            }
            Ok(parts[1..].to_vec())
        };

        let magic = header(MAGIC)?;
        let version: u32 = magic
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let algorithm = match header("algorithm")?.as_slice() {
            ["dqn"] => Algorithm::Dqn,
            ["pg"] => Algorithm::Pg,
            other => return Err(err(format!("unknown algorithm {other:?}"))),
        };
        let epsilon = parse_one::<f64>(&header("epsilon")?, "epsilon")?;

        let mut hp = Hyperparameters::default();
        for (name, _) in Hyperparameters::default().fields() {
            let parts = header("hp")?;
            if parts.len() != 2 || parts[0] != name {
                return Err(err(format!("expected hyperparameter {name}, found {parts:?}")));
            }
            set_field(&mut hp, name, parts[1]).map_err(|m| err(format!("hyperparameter {name}: {m}")))?;
        }
        hp.validate().map_err(|m| err(format!("invalid hyperparameters: {m}")))?;

        let dims: Vec<usize> = header("layers")?
            .iter()
            .map(|d| d.parse().map_err(|_| err(format!("bad layer size {d:?}"))))
            .collect::<Result<_>>()?;
        if dims != hp.layer_sizes() {
            return Err(err(format!(
                "layer sizes {dims:?} disagree with hyperparameters {:?}",
                hp.layer_sizes()
            )));
        }
        let declared = parse_one::<usize>(&header("params")?, "params")?;
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if declared != expected {
            return Err(err(format!("params {declared} but layers need {expected}")));
        }

        let mut values = Vec::with_capacity(expected);
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| err(format!("bad parameter {line:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite parameter {line:?}")));
            }
            values.push(v);
        }
        if values.len() != expected {
            return Err(err(format!("expected {expected} parameters, found {}", values.len())));
        }

        let mut it = values.into_iter();
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut l = Layer::zeros(w[0], w[1]);
                l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|p| *p = it.next().unwrap());
                l
            })
            .collect();
        let net = NeuralNet::from_layers(layers).ok_or_else(|| err("inconsistent layers".into()))?;
        Ok(Checkpoint { algorithm, epsilon, hp, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| SimError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| SimError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn parse_one<T: std::str::FromStr>(parts: &[&str], what: &str) -> Result<T> {
    match parts {
        [v] => v
            .parse()
            .map_err(|_| SimError::Checkpoint(format!("bad {what} value {v:?}"))),
        _ => Err(SimError::Checkpoint(format!("bad {what} line"))),
    }
}

/// Set one hyperparameter from its textual form.
pub fn set_field(hp: &mut Hyperparameters, name: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
        v.trim().parse().map_err(|_| format!("cannot parse {v:?}"))
    }
    match name {
        "learning_rate" => hp.learning_rate = num(value)?,
        "batch_size" => hp.batch_size = num(value)?,
        "epsilon" => hp.epsilon = num(value)?,
        "epsilon_decay" => hp.epsilon_decay = num(value)?,
        "epsilon_min" => hp.epsilon_min = num(value)?,
        "gamma" => hp.gamma = num(value)?,
        "window_k" => hp.window_k = num(value)?,
        "hidden_sizes" => {
            hp.hidden_sizes = if value.trim().is_empty() {
                Vec::new()
            } else {
                value.split(',').map(num).collect::<Result<_, _>>()?
            }
        }
        "replay_capacity" => hp.replay_capacity = num(value)?,
        "target_sync_every" => hp.target_sync_every = num(value)?,
        "episodes" => hp.episodes = num(value)?,
        _ => return Err(format!("unknown hyperparameter {name:?}")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::seeded_rng;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let hp = Hyperparameters { window_k: 3, hidden_sizes: vec![7, 5], ..Default::default() };
        let net = NeuralNet::new(&hp.layer_sizes(), &mut seeded_rng(9));
        Checkpoint { algorithm: Algorithm::Dqn, epsilon: 0.37, hp, net }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let mut rng = seeded_rng(10);
        for _ in 0..100 {
            let x: Vec<f64> = (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = c.net.forward(&x);
            let b = back.net.forward(&x);
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn truncated_file_fails() {
        let text = sample().to_text();
        let cut = &text[..text.len() - 40];
        assert!(matches!(Checkpoint::parse(cut), Err(SimError::Checkpoint(_))));
        assert!(Checkpoint::parse("").is_err());
    }

    #[test]
    fn inconsistent_dims_fail() {
        let text = sample().to_text().replace("layers 11 7 5 4", "layers 11 7 6 4");
        let e = Checkpoint::parse(&text).unwrap_err().to_string();
        assert!(e.contains("layer sizes"), "{e}");
        let text = sample().to_text().replacen("\n0", "\n0\n0.5", 1);
        assert!(Checkpoint::parse(&text).is_err());
    }

    #[test]
    fn version_mismatch_names_versions() {
        let text = sample().to_text().replace("batchsim-checkpoint 1", "batchsim-checkpoint 7");
        let e = Checkpoint::parse(&text).unwrap_err().to_string();
        assert!(e.contains('7') && e.contains('1'), "{e}");
    }

    #[test]
    fn missing_file_fails() {
        assert!(matches!(Checkpoint::load("/nonexistent/agent.ckpt"), Err(SimError::Checkpoint(_))));
    }
}
