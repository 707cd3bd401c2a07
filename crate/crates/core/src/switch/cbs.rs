//! Credit-based shaper state for one traffic class.
//!
//! Credit is kept in nanobits (bits × 10⁻⁹) so that `slope [bit/s] × Δt [ns]`
//! accumulates without rounding.

use crate::time::SimTime;

pub const NANOBITS_PER_BIT: i128 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreditState {
    credit_nb: i128,
    idle_slope_bps: u64,
    port_rate_bps: u64,
    last_update: SimTime,
}

impl CreditState {
    pub fn new(idle_slope_bps: u64, port_rate_bps: u64) -> Self {
        assert!(idle_slope_bps <= port_rate_bps, "idle slope above port rate");
        CreditState {
            credit_nb: 0,
            idle_slope_bps,
            port_rate_bps,
            last_update: SimTime::ZERO,
        }
    }

    pub fn idle_slope_bps(&self) -> u64 {
        self.idle_slope_bps
    }

    /// Always `idle_slope - port_rate`, i.e. non-positive.
    pub fn send_slope_bps(&self) -> i64 {
        self.idle_slope_bps as i64 - self.port_rate_bps as i64
    }

    pub fn set_idle_slope(&mut self, idle_slope_bps: u64) {
        assert!(idle_slope_bps <= self.port_rate_bps, "idle slope above port rate");
        self.idle_slope_bps = idle_slope_bps;
    }

    pub fn credit_nanobits(&self) -> i128 {
        self.credit_nb
    }

    /// Credit in whole bits, truncated toward zero.
    pub fn credit_bits(&self) -> i64 {
        (self.credit_nb / NANOBITS_PER_BIT) as i64
    }

    pub fn set_credit_bits(&mut self, bits: i64) {
        self.credit_nb = bits as i128 * NANOBITS_PER_BIT;
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    pub fn is_eligible(&self) -> bool {
        self.credit_nb >= 0
    }

    /// Advances the credit from `last_update` to `now`, assuming the class was in the given
    /// state for the whole interval:
    ///
    /// * transmitting: credit falls at the send slope;
    /// * frames waiting: credit rises at the idle slope, without an upper clamp;
    /// * queue empty: negative credit recovers toward zero, positive credit resets to zero.
    pub fn update(&mut self, now: SimTime, transmitting: bool, queue_nonempty: bool) {
        let dt = now
            .checked_sub(self.last_update)
            .expect("credit update moved backwards in time")
            .as_ns() as i128;
        if transmitting {
            self.credit_nb += self.send_slope_bps() as i128 * dt;
        } else if queue_nonempty {
            self.credit_nb += self.idle_slope_bps as i128 * dt;
        } else if self.credit_nb < 0 {
            self.credit_nb = (self.credit_nb + self.idle_slope_bps as i128 * dt).min(0);
        } else {
            self.credit_nb = 0;
        }
        self.last_update = now;
    }

    /// Earliest time at which waiting frames make the credit non-negative again.
    /// `None` if the idle slope is zero and credit is negative.
    pub fn eligible_at(&self) -> Option<SimTime> {
        if self.credit_nb >= 0 {
            return Some(self.last_update);
        }
        if self.idle_slope_bps == 0 {
            return None;
        }
        let ns = (-self.credit_nb as u128).div_ceil(self.idle_slope_bps as u128);
        Some(self.last_update + SimTime::from_ns(ns as u64))
    }
}
