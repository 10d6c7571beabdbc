//! Unit conventions. Sizes are in KB, bandwidths in KBps, times in seconds.
//! Decimal prefixes throughout: 1 MB = 1000 KB.

pub const KB_PER_MB: f64 = 1000.0;

#[inline]
pub fn mb(megabytes: f64) -> f64 {
    megabytes * KB_PER_MB
}
