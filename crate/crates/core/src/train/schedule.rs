/// Linear warm-up to `peak` at step `warmup`, then linear decay to zero at
/// step `total`. Steps count from 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.total {
            return 0.0;
        }
        if step <= self.warmup {
            return self.peak * step as f64 / self.warmup.max(1) as f64;
        }
        self.peak * (self.total - step) as f64 / (self.total - self.warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn breakpoints() {
        let s = LrSchedule {
            peak: 1e-4,
            warmup: 30,
            total: 300,
        };
        assert_eq!(s.at(30), 1e-4);
        assert_eq!(s.at(300), 0.0);
        assert_eq!(s.at(15), 0.5e-4);
        assert!((s.at(165) - 0.5e-4).abs() < 1e-18);
        assert_eq!(s.at(0), 0.0);
    }

    proptest! {
        #[test]
        fn bounded_and_unimodal(warmup in 1usize..50, extra in 1usize..200, step in 0usize..300) {
            let s = LrSchedule { peak: 2e-3, warmup, total: warmup + extra };
            let lr = s.at(step);
            prop_assert!((0.0..=2e-3).contains(&lr));
            if step < warmup {
                prop_assert!(s.at(step + 1) >= lr);
            } else {
                prop_assert!(s.at(step + 1) <= lr);
            }
        }
    }
}
