//! Rate-unit conversions. Internally everything runs in bits per
//! millisecond; Mbit/s appears only at I/O boundaries (configs, CSVs,
//! messages). The two happen to differ by a factor of 1000.

pub const BITS_PER_MS_PER_MBPS: f64 = 1000.0;

pub fn mbps_to_bits_per_ms(mbps: f64) -> f64 {
    mbps * BITS_PER_MS_PER_MBPS
}

pub fn bits_per_ms_to_mbps(bits_per_ms: f64) -> f64 {
    bits_per_ms / BITS_PER_MS_PER_MBPS
}
