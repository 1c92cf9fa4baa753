//! Weight initialisation.

use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;

/// Standard normal draws via Box–Muller.
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let th = 2.0 * core::f64::consts::PI * u2;
        out.push(T::from_f64c(std * r * libm::cos(th)));
        if out.len() < n {
            out.push(T::from_f64c(std * r * libm::sin(th)));
        }
    }
    out
}

/// He-normal for ReLU networks: `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<T> {
    normal(rng, n, libm::sqrt(2.0 / fan_in as f64))
}

pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64c(rng.gen_range(-bound..=bound))).collect()
}
