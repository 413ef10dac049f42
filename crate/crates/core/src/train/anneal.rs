pub const HALVE_AFTER: usize = 3;
pub const MAX_HALVINGS: usize = 5;
pub const STOP_AFTER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Halve,
    Stop,
}

/// Learning-rate halving driven by validation perplexity.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    pub halvings: usize,
    pub evals_without_improvement: usize,
    pub best_val_perplexity: f64,
    pub post_final_halving_strikes: usize,
}

impl Default for AnnealState {
    fn default() -> Self {
        Self {
            halvings: 0,
            evals_without_improvement: 0,
            best_val_perplexity: f64::INFINITY,
            post_final_halving_strikes: 0,
        }
    }
}

impl AnnealState {
    /// `lr_base / 2^halvings`; exact since it only changes the exponent.
    pub fn lr(&self, lr_base: f64) -> f64 {
        lr_base * 0.5f64.powi(self.halvings as i32)
    }
}

pub fn anneal_update(state: &mut AnnealState, new_perplexity: f64) -> Decision {
    if new_perplexity < state.best_val_perplexity {
        state.best_val_perplexity = new_perplexity;
        state.evals_without_improvement = 0;
        state.post_final_halving_strikes = 0;
        return Decision::Continue;
    }
    if state.halvings >= MAX_HALVINGS {
        state.post_final_halving_strikes += 1;
        if state.post_final_halving_strikes >= STOP_AFTER {
            return Decision::Stop;
        }
        return Decision::Continue;
    }
    state.evals_without_improvement += 1;
    if state.evals_without_improvement >= HALVE_AFTER {
        state.evals_without_improvement = 0;
        state.halvings += 1;
        return Decision::Halve;
    }
    Decision::Continue
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seq: &[f64]) -> Vec<Decision> {
        let mut s = AnnealState::default();
        seq.iter().map(|p| anneal_update(&mut s, *p)).collect()
    }

    #[test]
    fn improving_continues() {
        assert_eq!(run(&[10.0, 9.0, 8.0]), [Decision::Continue; 3]);
    }

    #[test]
    fn third_strike_halves() {
        use Decision::*;
        assert_eq!(run(&[10.0, 11.0, 11.0, 11.0]), [Continue, Continue, Continue, Halve]);
    }

    #[test]
    fn equal_is_not_improvement() {
        assert_eq!(run(&[5.0, 5.0, 5.0, 5.0])[3], Decision::Halve);
    }

    #[test]
    fn improvement_resets_strikes() {
        let d = run(&[10.0, 11.0, 11.0, 9.0, 11.0, 11.0]);
        assert!(d.iter().all(|d| *d == Decision::Continue));
    }

    #[test]
    fn lr_is_exact_power_of_two() {
        let mut s = AnnealState::default();
        for k in 0..=5 {
            s.halvings = k;
            assert_eq!(s.lr(2e-4), 2e-4 / f64::from(1u32 << k));
        }
    }
}
