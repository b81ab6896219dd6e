use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cv::CvResult;
use super::fit::{ModelSpec, TrainConfig};
use crate::error::{Error, Result};

/// One hyperparameter assignment, keyed by name.
pub type Hyperparams = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    Grid,
    Random { n_trials: usize },
    /// Successive halving over random draws: every rung keeps the best
    /// `1/eta` of the configurations and multiplies their training budget by `eta`.
    Adaptive {
        n_trials: usize,
        #[serde(default = "three")]
        eta: usize,
    },
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, Vec<Value>>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: Hyperparams,
    /// Fraction of the full training budget (epochs or boosting rounds).
    pub budget: f64,
    pub fold_aucs: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_auc: Option<f64>,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    /// `trial,budget,params,fold_aucs,mean_auc` with JSON-encoded params.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,budget,params,fold_aucs,mean_auc\n");
        for t in &self.trials {
            let folds: Vec<String> = t
                .fold_aucs
                .iter()
                .map(|a| a.map_or_else(|| "NA".to_string(), |v| format!("{v:?}")))
                .collect();
            let params = serde_json::to_string(&t.params).expect("values serialise").replace('"', "\"\"");
            s.push_str(&format!(
                "{},{:?},\"{}\",{},{}\n",
                t.id,
                t.budget,
                params,
                folds.join(";"),
                t.mean_auc.map_or_else(|| "NA".to_string(), |v| format!("{v:?}"))
            ));
        }
        s
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidConfig("search space is empty".into()));
        }
        if let Some((k, _)) = self.params.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidConfig(format!("hyperparameter `{k}` has no candidates")));
        }
        Ok(())
    }

    /// Number of grid combinations (saturating).
    pub fn size(&self) -> usize {
        self.params.values().fold(1usize, |acc, v| acc.saturating_mul(v.len()))
    }

    /// The `index`-th combination in mixed-radix order over sorted keys.
    pub fn combination(&self, mut index: usize) -> Hyperparams {
        let mut out = Hyperparams::new();
        for (k, vals) in self.params.iter().rev() {
            out.insert(k.clone(), vals[index % vals.len()].clone());
            index /= vals.len();
        }
        out
    }

    fn draw_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let total = self.size();
        if n >= total {
            let mut all: Vec<usize> = (0..total).collect();
            all.shuffle(rng);
            return all;
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let i = rng.random_range(0..total);
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    }
}

/// Runs the search. `objective(params, budget)` returns a cross-validation
/// result; the best trial is the one with the highest mean AUC, earliest on ties.
pub fn hyperparam_search<F>(space: &SearchSpace, seed: u64, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(&Hyperparams, f64) -> Result<CvResult>,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = Vec::new();
    let mut run = |params: Hyperparams, budget: f64, trials: &mut Vec<Trial>| -> Result<Option<f64>> {
        let cv = objective(&params, budget)?;
        let mean = cv.mean_auc;
        trials.push(Trial {
            id: trials.len(),
            params,
            budget,
            fold_aucs: cv.fold_aucs,
            mean_auc: mean,
        });
        Ok(mean)
    };
    match &space.strategy {
        Strategy::Grid => {
            for i in 0..space.size() {
                run(space.combination(i), 1.0, &mut trials)?;
            }
        }
        Strategy::Random { n_trials } => {
            for i in space.draw_indices(*n_trials, &mut rng) {
                run(space.combination(i), 1.0, &mut trials)?;
            }
        }
        Strategy::Adaptive { n_trials, eta } => {
            let eta = (*eta).max(2);
            let mut alive: Vec<Hyperparams> = space
                .draw_indices(*n_trials, &mut rng)
                .into_iter()
                .map(|i| space.combination(i))
                .collect();
            let mut rungs = 0;
            while eta.pow(rungs + 1) <= alive.len() {
                rungs += 1;
            }
            let mut budget = 1.0 / (eta.pow(rungs) as f64);
            loop {
                let mut scored = Vec::with_capacity(alive.len());
                for (pos, p) in alive.iter().enumerate() {
                    let s = run(p.clone(), budget, &mut trials)?;
                    scored.push((s.unwrap_or(f64::NEG_INFINITY), pos));
                }
                if budget >= 1.0 || alive.len() <= 1 {
                    break;
                }
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let keep = alive.len().div_ceil(eta);
                let mut kept: Vec<usize> = scored[..keep].iter().map(|&(_, p)| p).collect();
                kept.sort_unstable();
                alive = kept.into_iter().map(|p| alive[p].clone()).collect();
                budget = (budget * eta as f64).min(1.0);
            }
        }
    }
    let best = trials
        .iter()
        .filter(|t| t.mean_auc.is_some())
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if b.mean_auc >= t.mean_auc => Some(b),
            _ => Some(t),
        });
    Ok(SearchResult {
        best: best.map(|t| t.params.clone()).unwrap_or_else(|| trials[0].params.clone()),
        best_auc: best.and_then(|t| t.mean_auc),
        trials,
    })
}

fn set_key(node: &mut Value, key: &str, value: &Value) -> bool {
    match node {
        Value::Object(map) => {
            if let Some(slot) = map.get_mut(key) {
                *slot = value.clone();
                return true;
            }
            map.values_mut().any(|v| set_key(v, key, value))
        }
        _ => false,
    }
}

/// Applies named hyperparameters to a model spec and training config.
/// Training keys (`learning_rate`, `batch_size`, …) go to the config, the rest
/// to the model; for GBDT, keys the model owns (such as `learning_rate`) win. `ffnn_*` keys are ignored when the static branch is off.
/// `budget < 1` scales epochs / boosting rounds down (at least one).
pub fn apply_hyperparams(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    params: &Hyperparams,
    budget: f64,
) -> Result<(ModelSpec, TrainConfig)> {
    let mut spec_v = serde_json::to_value(spec)?;
    let mut cfg_v = serde_json::to_value(cfg)?;
    for (k, v) in params {
        // Boosting shrinkage lives in the model, so GBDT specs claim shared keys first.
        let gbdt = matches!(spec, ModelSpec::Gbdt(_));
        let placed = (gbdt && set_key(&mut spec_v, k, v))
            || match cfg_v.as_object_mut().and_then(|m| m.get_mut(k)) {
                Some(slot) => {
                    *slot = v.clone();
                    true
                }
                None => set_key(&mut spec_v, k, v),
            };
        if !placed {
            let static_off = spec_v.get("static_branch").is_some_and(Value::is_null);
            if !(k.starts_with("ffnn_") && static_off) {
                return Err(Error::InvalidConfig(format!(
                    "hyperparameter `{k}` does not apply to {}",
                    spec.family_name()
                )));
            }
        }
    }
    let mut spec: ModelSpec = serde_json::from_value(spec_v)
        .map_err(|e| Error::InvalidConfig(format!("bad model hyperparameters: {e}")))?;
    let mut cfg: TrainConfig =
        serde_json::from_value(cfg_v).map_err(|e| Error::InvalidConfig(format!("bad training hyperparameters: {e}")))?;
    if budget < 1.0 {
        let scale = |n: usize| ((n as f64 * budget).ceil() as usize).max(1);
        cfg.num_epochs = scale(cfg.num_epochs);
        if let ModelSpec::Gbdt(p) = &mut spec {
            p.n_rounds = scale(p.n_rounds);
        }
    }
    Ok((spec, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{FfnnSpec, FusedHyper};
    use crate::tensorcore::Activation;
    use serde_json::json;

    fn space(strategy: Strategy) -> SearchSpace {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), vec![json!(1), json!(2)]);
        params.insert("b".to_string(), vec![json!("x")]);
        SearchSpace { params, strategy }
    }

    fn objective(p: &Hyperparams, _: f64) -> Result<CvResult> {
        let a = p["a"].as_f64().unwrap();
        Ok(CvResult::from_folds(vec![Some(0.5 + a / 10.0)]))
    }

    #[test]
    fn grid_and_random_cover_space() {
        let r = hyperparam_search(&space(Strategy::Grid), 0, objective).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert_eq!(r.best["a"], json!(2));
        let r = hyperparam_search(&space(Strategy::Random { n_trials: 5 }), 0, objective).unwrap();
        let mut seen: Vec<i64> = r.trials.iter().map(|t| t.params["a"].as_i64().unwrap()).collect();
        seen.sort();
        assert_eq!(seen, vec![1, 2]);
        let max = r.trials.iter().filter_map(|t| t.mean_auc).fold(f64::MIN, f64::max);
        assert_eq!(r.best_auc, Some(max));
    }

    #[test]
    fn successive_halving_budgets() {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), (0..9).map(|i| json!(i)).collect());
        let s = SearchSpace {
            params,
            strategy: Strategy::Adaptive { n_trials: 9, eta: 3 },
        };
        let r = hyperparam_search(&s, 1, objective).unwrap();
        let budgets: Vec<f64> = r.trials.iter().map(|t| t.budget).collect();
        assert_eq!(budgets.iter().filter(|&&b| b == 1.0 / 9.0).count(), 9);
        assert_eq!(budgets.iter().filter(|&&b| b == 1.0 / 3.0).count(), 3);
        assert_eq!(budgets.iter().filter(|&&b| b == 1.0).count(), 1);
        assert_eq!(r.best["a"], json!(8));
    }

    #[test]
    fn applying_hyperparameters() {
        let spec = ModelSpec::FusedLstm(FusedHyper {
            static_branch: Some(FfnnSpec {
                ffnn_layers: 1,
                ffnn_units: 8,
                ffnn_activation: Activation::Relu,
                ffnn_dropout: 0.0,
            }),
            ..FusedHyper::default()
        });
        let mut p = Hyperparams::new();
        p.insert("hidden_dim".into(), json!(32));
        p.insert("learning_rate".into(), json!(0.01));
        p.insert("ffnn_activation".into(), json!("tanh"));
        let (s2, c2) = apply_hyperparams(&spec, &TrainConfig::default(), &p, 0.5).unwrap();
        match s2 {
            ModelSpec::FusedLstm(h) => {
                assert_eq!(h.hidden_dim, 32);
                assert_eq!(h.static_branch.unwrap().ffnn_activation, Activation::Tanh);
            }
            _ => panic!(),
        }
        assert_eq!(c2.learning_rate, 0.01);
        assert_eq!(c2.num_epochs, 20);
        p.insert("num_leaves".into(), json!(4));
        assert!(apply_hyperparams(&spec, &TrainConfig::default(), &p, 1.0).is_err());
    }
}
