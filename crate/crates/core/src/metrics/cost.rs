use serde::Serialize;

use crate::allocation::AllocationMap;
use crate::error::{ensure, Result};
use crate::model::ModelConfig;

/// Symbols of the analytic cost estimators. Big-O constants are taken as 1,
/// so only ratios between strategies carry meaning.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct CostModelInputs {
    pub tau: f64,
    pub l: f64,
    /// Parameters per frozen layer.
    pub d: f64,
    /// Parameters per LoRA layer group.
    pub R: f64,
    /// Local samples per client per round.
    pub N: f64,
    pub s: f64,
    /// Mean trainable layers per selected client.
    pub c_bar: f64,
    pub N_FIM: f64,
    pub T_FIM: f64,
    pub T: f64,
}

impl CostModelInputs {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let named = [
            ("tau", self.tau),
            ("l", self.l),
            ("d", self.d),
            ("R", self.R),
            ("N", self.N),
            ("s", self.s),
            ("c_bar", self.c_bar),
            ("N_FIM", self.N_FIM),
            ("T_FIM", self.T_FIM),
            ("T", self.T),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.c_bar > self.l {
            errs.push(format!("c_bar {} exceeds l {}", self.c_bar, self.l));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        ensure!(errs.is_empty(), Parameter, "{}", errs.join("; "));
        Ok(())
    }

    fn width_sq(&self) -> f64 {
        (self.d + self.R).powi(2)
    }
}

/// Backward compute with every layer trained: `tau l (d+R)^2 N s`.
pub fn backward_cost_full(x: &CostModelInputs) -> f64 {
    x.tau * x.l * x.width_sq() * x.N * x.s
}

/// Backward compute with `c_bar` trained layers per client: `tau c_bar (d+R)^2 N s`.
pub fn backward_cost_ours(x: &CostModelInputs) -> f64 {
    x.tau * x.c_bar * x.width_sq() * x.N * x.s
}

/// Backward compute summed client by client: `tau (d+R)^2 sum_i c_i N_i`.
/// `clients` holds `(c_i, N_i)` for each trained client.
pub fn backward_cost_per_client(tau: f64, d: f64, r: f64, clients: &[(usize, usize)]) -> f64 {
    let work: f64 = clients.iter().map(|&(c, n)| (c * n) as f64).sum();
    tau * (d + r).powi(2) * work
}

/// Per-round upload plus download of every LoRA layer: `2 l R s`.
pub fn comm_cost_full(x: &CostModelInputs) -> f64 {
    2.0 * x.l * x.R * x.s
}

/// Per-round traffic of the trained layers plus amortised map broadcast:
/// `2 c_bar R s + l s T_FIM / T`.
pub fn comm_cost_ours(x: &CostModelInputs) -> f64 {
    2.0 * x.c_bar * x.R * x.s + x.l * x.s * x.T_FIM / x.T
}

/// Amortised server-side FIM scoring work per round: `l (d+R)^2 N_FIM T_FIM / T`.
pub fn fim_overhead(x: &CostModelInputs) -> f64 {
    x.l * x.width_sq() * x.N_FIM * x.T_FIM / x.T
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub backward_full: f64,
    pub backward_ours: f64,
    pub backward_ratio: f64,
    pub comm_full: f64,
    pub comm_ours: f64,
    pub comm_ratio: f64,
    pub fim_overhead: f64,
}

pub fn cost_report(x: &CostModelInputs) -> Result<CostReport> {
    x.validate()?;
    let (bf, bo) = (backward_cost_full(x), backward_cost_ours(x));
    let (cf, co) = (comm_cost_full(x), comm_cost_ours(x));
    Ok(CostReport {
        backward_full: bf,
        backward_ours: bo,
        backward_ratio: bo / bf,
        comm_full: cf,
        comm_ours: co,
        comm_ratio: co / cf,
        fim_overhead: fim_overhead(x),
    })
}

/// Memory proxy for one client: trainable parameter count plus the activation
/// slots its adapters keep (input and rank-space activations of q and v for
/// every position of every trained layer).
pub fn memory_proxy(cfg: &ModelConfig, map: &AllocationMap) -> usize {
    let c = map.count();
    let params = c * cfg.lora_params_per_layer() + cfg.head_params();
    let slots = c * 2 * cfg.seq_len * (cfg.d_model + cfg.rank);
    params + slots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(c_bar: f64) -> CostModelInputs {
        CostModelInputs {
            tau: 1.0,
            l: 12.0,
            d: 64.0,
            R: 16.0,
            N: 100.0,
            s: 10.0,
            c_bar,
            N_FIM: 100.0,
            T_FIM: 50.0,
            T: 500.0,
        }
    }

    #[test]
    fn backward_ratios() {
        assert_eq!(
            backward_cost_ours(&inputs(12.0)),
            backward_cost_full(&inputs(12.0))
        );
        let r = cost_report(&inputs(6.0)).unwrap();
        assert_eq!(r.backward_ratio, 0.5);
        assert_eq!(cost_report(&inputs(9.0)).unwrap().backward_ratio, 0.75);
    }

    #[test]
    fn comm_worked_example() {
        let x = CostModelInputs {
            l: 12.0,
            R: 2048.0,
            s: 10.0,
            c_bar: 9.0,
            T_FIM: 50.0,
            T: 500.0,
            ..inputs(9.0)
        };
        assert_eq!(comm_cost_ours(&x), 368_652.0);
        assert_eq!(comm_cost_full(&x), 491_520.0);
    }

    #[test]
    fn per_client_sum_matches_mean_form() {
        let clients = [(6, 100), (9, 100), (12, 100), (9, 100)];
        let x = CostModelInputs {
            s: 4.0,
            ..inputs(9.0)
        };
        let per = backward_cost_per_client(x.tau, x.d, x.R, &clients);
        assert_eq!(per, backward_cost_ours(&x));
    }

    #[test]
    fn monotone_in_each_factor() {
        let base = inputs(6.0);
        let b0 = backward_cost_ours(&base);
        for bump in [
            CostModelInputs {
                c_bar: 7.0,
                ..base.clone()
            },
            CostModelInputs {
                N: 101.0,
                ..base.clone()
            },
            CostModelInputs {
                s: 11.0,
                ..base.clone()
            },
            CostModelInputs {
                tau: 2.0,
                ..base.clone()
            },
        ] {
            assert!(backward_cost_ours(&bump) > b0);
        }
    }

    #[test]
    fn validation() {
        assert!(cost_report(&inputs(13.0)).is_err());
        assert!(cost_report(&CostModelInputs {
            T: 0.0,
            ..inputs(6.0)
        })
        .is_err());
    }

    #[test]
    fn memory_grows_with_layers() {
        let cfg = ModelConfig::default();
        let small = memory_proxy(&cfg, &AllocationMap::from_layers(12, &[0]).unwrap());
        let big = memory_proxy(&cfg, &AllocationMap::full(12));
        assert!(big > small);
        assert_eq!(
            memory_proxy(&cfg, &AllocationMap::empty(12)),
            cfg.head_params()
        );
    }
}
