//! Seeded synthetic forcing for experiments and tests.

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{ForcingRecord, ForcingSeries};

/// `n_years` complete water years starting Oct 1 of `first_wy - 1`, without observed flow.
///
/// Wet-day probability and PET both follow an annual cycle; daily rain depths are exponential.
pub fn synthetic_forcing(first_wy: i32, n_years: usize, seed: u64) -> ForcingSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = Exp::new(1.0 / 9.0).expect("positive rate");
    let start = NaiveDate::from_ymd_opt(first_wy - 1, 10, 1).expect("valid date");
    let end = NaiveDate::from_ymd_opt(first_wy - 1 + n_years as i32, 10, 1).expect("valid date");

    let mut records = Vec::new();
    let mut date = start;
    while date < end {
        let phase = 2.0 * std::f64::consts::PI * (date.ordinal0() as f64) / 365.25;
        // winter-wet, summer-dry
        let p_wet = 0.35 + 0.15 * phase.cos();
        let precip = if rng.random::<f64>() < p_wet {
            depth.sample(&mut rng)
        } else {
            0.0
        };
        let pet = (3.0 - 2.5 * phase.cos() + 0.3 * (rng.random::<f64>() - 0.5)).max(0.05);
        records.push(ForcingRecord {
            date,
            precip,
            pet,
            q_obs: None,
        });
        date = date.succ_opt().expect("date overflow");
    }
    ForcingSeries::new(records).expect("synthetic records are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_whole_water_years() {
        let s = synthetic_forcing(2001, 3, 1);
        assert_eq!(s.len(), 365 * 3);
        assert_eq!(synthetic_forcing(2004, 1, 1).len(), 366);
        assert_eq!(s.water_years()[0], 2001);
        assert_eq!(*s.water_years().last().unwrap(), 2003);
        assert!(s.precip().iter().all(|p| *p >= 0.0));
        assert!(s.pet().iter().all(|p| *p > 0.0));
        assert!(s.build_spinup(1).is_ok());
    }

    #[test]
    fn seeded() {
        assert_eq!(synthetic_forcing(2001, 2, 9), synthetic_forcing(2001, 2, 9));
        assert_ne!(
            synthetic_forcing(2001, 2, 9),
            synthetic_forcing(2001, 2, 10)
        );
    }
}
