//! Bit source, Gray-coded 16QAM mapping and the BER / Q-factor / EVM metrics.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{invalid, Error, Result};

/// MT19937 generator (32-bit Mersenne Twister).
#[derive(Clone)]
pub struct Mt19937 {
    state: [u32; 624],
    index: usize,
}

impl Mt19937 {
    pub fn new(seed: u32) -> Self {
        let mut state = [0u32; 624];
        state[0] = seed;
        for i in 1..624 {
            let prev = state[i - 1];
            state[i] = 1_812_433_253u32.wrapping_mul(prev ^ (prev >> 30)).wrapping_add(i as u32);
        }
        Self { state, index: 624 }
    }

    fn twist(&mut self) {
        for i in 0..624 {
            let y = (self.state[i] & 0x8000_0000) | (self.state[(i + 1) % 624] & 0x7fff_ffff);
            let mut next = self.state[(i + 397) % 624] ^ (y >> 1);
            if y & 1 != 0 {
                next ^= 0x9908_b0df;
            }
            self.state[i] = next;
        }
        self.index = 0;
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.index >= 624 {
            self.twist();
        }
        let mut y = self.state[self.index];
        self.index += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^ (y >> 18)
    }
}

/// `n` bits from the MT19937 stream, each 32-bit word expanded MSB first.
pub fn mt19937_bits(seed: u32, n: usize) -> Vec<u8> {
    let mut mt = Mt19937::new(seed);
    let mut bits = Vec::with_capacity(n);
    while bits.len() < n {
        let word = mt.next_u32();
        for b in (0..32).rev() {
            if bits.len() == n {
                break;
            }
            bits.push(((word >> b) & 1) as u8);
        }
    }
    bits
}

const SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

fn level_bits(v: f64) -> (u8, u8) {
    // boundaries resolve toward the smaller-amplitude level
    if v > 2.0 {
        (1, 0)
    } else if v >= 0.0 {
        (1, 1)
    } else if v >= -2.0 {
        (0, 1)
    } else {
        (0, 0)
    }
}

/// Maps groups of four bits `b0 b1 b2 b3` to `(I(b0 b1) + i Q(b2 b3)) / sqrt(10)`.
pub fn map_16qam(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(4) {
        return invalid(format!("{} bits is not a whole number of 16QAM symbols", bits.len()));
    }
    Ok(bits
        .chunks_exact(4)
        .map(|b| Complex64::new(gray_level(b[0], b[1]) * SCALE, gray_level(b[2], b[3]) * SCALE))
        .collect())
}

pub fn demap_16qam_hard(symbols: &[Complex64]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        let (b0, b1) = level_bits(s.re / SCALE);
        let (b2, b3) = level_bits(s.im / SCALE);
        bits.extend_from_slice(&[b0, b1, b2, b3]);
    }
    bits
}

/// Nearest constellation point.
pub fn decide_16qam(s: Complex64) -> Complex64 {
    let level = |v: f64| {
        let (a, b) = level_bits(v / SCALE);
        gray_level(a, b) * SCALE
    };
    Complex64::new(level(s.re), level(s.im))
}

pub fn ber(rx_bits: &[u8], tx_bits: &[u8]) -> Result<f64> {
    if rx_bits.len() != tx_bits.len() {
        return Err(Error::LengthMismatch { left: rx_bits.len(), right: tx_bits.len() });
    }
    if rx_bits.is_empty() {
        return invalid("BER of an empty sequence");
    }
    let errors = rx_bits.iter().zip(tx_bits).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / rx_bits.len() as f64)
}

/// Inverse complementary error function: statrs' rational approximation
/// polished with Newton steps on `erfc`.
pub fn erfc_inverse(y: f64) -> f64 {
    let mut x = erfc_inv(y);
    for _ in 0..2 {
        let slope = -2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
        if slope == 0.0 {
            break;
        }
        let step = (erfc(x) - y) / slope;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}

/// `20 log10(sqrt(2) erfc^-1(2 ber))`.
pub fn q_factor_db(ber: f64) -> Result<f64> {
    if !(ber > 0.0 && ber < 0.5) {
        return Err(Error::OutOfDomain(format!("BER {ber} outside (0, 0.5)")));
    }
    Ok(20.0 * (2f64.sqrt() * erfc_inverse(2.0 * ber)).log10())
}

/// Q-factor that saturates instead of failing: +inf for error-free, -inf
/// at or above 0.5.
pub fn q_factor_db_saturating(ber: f64) -> f64 {
    if ber <= 0.0 {
        f64::INFINITY
    } else if ber >= 0.5 {
        f64::NEG_INFINITY
    } else {
        q_factor_db(ber).expect("domain checked")
    }
}

pub fn evm(rx: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if rx.len() != reference.len() {
        return Err(Error::LengthMismatch { left: rx.len(), right: reference.len() });
    }
    let ref_power: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    if ref_power == 0.0 {
        return invalid("EVM reference is all zero");
    }
    let err: f64 = rx.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok((err / ref_power).sqrt())
}

/// Transmitted dual-polarization 16QAM frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub bits_x: Vec<u8>,
    pub bits_y: Vec<u8>,
    pub tx_x: Vec<Complex64>,
    pub tx_y: Vec<Complex64>,
    pub seed: u32,
    pub n_symbols: usize,
}

impl SymbolFrame {
    /// Draws `8 * n_symbols` bits from one MT19937 stream; the first half
    /// feeds X and the second half Y.
    pub fn generate(seed: u32, n_symbols: usize) -> Self {
        let bits = mt19937_bits(seed, 8 * n_symbols);
        let (bx, by) = bits.split_at(4 * n_symbols);
        Self {
            tx_x: map_16qam(bx).expect("multiple of four"),
            tx_y: map_16qam(by).expect("multiple of four"),
            bits_x: bx.to_vec(),
            bits_y: by.to_vec(),
            seed,
            n_symbols,
        }
    }

    pub fn symbols(&self) -> [&[Complex64]; 2] {
        [&self.tx_x, &self.tx_y]
    }

    pub fn bits(&self) -> [&[u8]; 2] {
        [&self.bits_x, &self.bits_y]
    }
}

/// Per-polarization BER averaged over both polarizations.
pub fn dual_pol_ber(rx: [&[Complex64]; 2], frame: &SymbolFrame) -> Result<f64> {
    let mut total = 0.0;
    for (r, b) in rx.iter().zip(frame.bits()) {
        total += ber(&demap_16qam_hard(r), b)?;
    }
    Ok(total / 2.0)
}

pub fn dual_pol_evm(rx: [&[Complex64]; 2], frame: &SymbolFrame) -> Result<f64> {
    let mut rx_all = rx[0].to_vec();
    rx_all.extend_from_slice(rx[1]);
    let mut tx_all = frame.tx_x.clone();
    tx_all.extend_from_slice(&frame.tx_y);
    evm(&rx_all, &tx_all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EqualizerId {
    Cdc,
    Dbp,
    Cnn,
    Bilstm,
}

impl EqualizerId {
    pub const ALL: [EqualizerId; 4] = [Self::Cdc, Self::Dbp, Self::Cnn, Self::Bilstm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cdc => "CDC",
            Self::Dbp => "DBP",
            Self::Cnn => "CNN",
            Self::Bilstm => "BILSTM",
        }
    }
}

impl fmt::Display for EqualizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EqualizerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CDC" => Ok(Self::Cdc),
            "DBP" => Ok(Self::Dbp),
            "CNN" | "DEEP_CNN" => Ok(Self::Cnn),
            "BILSTM" => Ok(Self::Bilstm),
            other => invalid(format!("unknown equalizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QReport {
    pub equalizer: EqualizerId,
    pub power_dbm: f64,
    pub ber: f64,
    pub q_db: f64,
    pub evm: f64,
    pub n_symbols: usize,
}

impl QReport {
    pub fn new(equalizer: EqualizerId, power_dbm: f64, ber: f64, evm: f64, n_symbols: usize) -> Result<Self> {
        if !(0.0..=0.5).contains(&ber) {
            return Err(Error::OutOfDomain(format!("BER {ber} outside [0, 0.5]")));
        }
        if n_symbols == 0 {
            return invalid("report over zero symbols");
        }
        Ok(Self { equalizer, power_dbm, ber, q_db: q_factor_db_saturating(ber), evm, n_symbols })
    }

    pub const CSV_HEADER: &'static str = "equalizer,power_dbm,ber,q_db,evm,n_symbols";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{:.8e},{:.6},{:.8e},{}",
            self.equalizer, self.power_dbm, self.ber, self.q_db, self.evm, self.n_symbols
        )
    }
}

/// Renders reports sorted by (equalizer, power) with a header line.
pub fn reports_to_csv(reports: &[QReport]) -> String {
    let mut sorted: Vec<&QReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.equalizer.cmp(&b.equalizer).then(a.power_dbm.total_cmp(&b.power_dbm)));
    let mut out = String::from(QReport::CSV_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_reports_csv(text: &str) -> Result<Vec<QReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == QReport::CSV_HEADER => {}
        _ => return Err(Error::Format("missing QReport CSV header".into())),
    }
    let bad = |l: &str| Error::Format(format!("bad QReport row '{l}'"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            Ok(QReport {
                equalizer: f[0].parse()?,
                power_dbm: num(f[1])?,
                ber: num(f[2])?,
                q_db: num(f[3])?,
                evm: num(f[4])?,
                n_symbols: f[5].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> Vec<u8> {
        s.bytes().map(|b| b - b'0').collect()
    }

    #[test]
    fn mt19937_reference_outputs() {
        let mut mt = Mt19937::new(5489);
        let first: Vec<u32> = (0..3).map(|_| mt.next_u32()).collect();
        assert_eq!(first, [3_499_211_612, 581_869_302, 3_890_346_734]);
        // 10000th output of the default-seeded generator
        let mut mt = Mt19937::new(5489);
        let v = (0..10_000).map(|_| mt.next_u32()).last().unwrap();
        assert_eq!(v, 4_123_659_995);
    }

    #[test]
    fn mt19937_bits_msb_first() {
        let b = mt19937_bits(5489, 32);
        let word = b.iter().fold(0u32, |acc, &x| (acc << 1) | x as u32);
        assert_eq!(word, 3_499_211_612);
        assert!(mt19937_bits(1, 0).is_empty());
        assert_eq!(mt19937_bits(42, 77), mt19937_bits(42, 77));
        assert_eq!(&mt19937_bits(42, 100)[..77], &mt19937_bits(42, 77)[..]);
    }

    #[test]
    fn mapping_table() {
        let s = map_16qam(&bits("0000")).unwrap()[0];
        assert!((s - Complex64::new(-3.0, -3.0) * SCALE).norm() < 1e-15);
        let s = map_16qam(&bits("1111")).unwrap()[0];
        assert!((s - Complex64::new(1.0, 1.0) * SCALE).norm() < 1e-15);
        let s = map_16qam(&bits("1001")).unwrap()[0];
        assert!((s - Complex64::new(3.0, -1.0) * SCALE).norm() < 1e-15);
        assert!(map_16qam(&bits("101")).is_err());
    }

    #[test]
    fn constellation_has_unit_power() {
        let all: Vec<u8> = (0..16u8).flat_map(|v| (0..4).rev().map(move |b| (v >> b) & 1)).collect();
        let syms = map_16qam(&all).unwrap();
        let p: f64 = syms.iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(demap_16qam_hard(&syms), all);
    }

    #[test]
    fn hard_decisions() {
        let s = Complex64::new(0.99, 0.99) * SCALE;
        assert_eq!(demap_16qam_hard(&[s]), bits("1111"));
        // exactly on the +2 boundary: lower amplitude (+1) wins
        let s = Complex64::new(2.0, -2.0) * SCALE;
        assert_eq!(demap_16qam_hard(&[s]), bits("1101"));
        assert_eq!(decide_16qam(Complex64::new(2.5, -0.2) * SCALE), Complex64::new(3.0, -1.0) * SCALE);
    }

    #[test]
    fn ber_counts() {
        assert_eq!(ber(&bits("0101"), &bits("0101")).unwrap(), 0.0);
        assert_eq!(ber(&bits("0000"), &bits("1111")).unwrap(), 1.0);
        let mut a = vec![0u8; 100];
        let b = a.clone();
        a[17] = 1;
        assert_eq!(ber(&a, &b).unwrap(), 0.01);
        assert!(ber(&a, &b[..99]).is_err());
        assert!(ber(&[], &[]).is_err());
    }

    /// Independent route to the Q-factor: bisection on the Gaussian tail.
    fn q_oracle_db(ber: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * erfc(mid / 2f64.sqrt()) > ber {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        20.0 * (0.5 * (lo + hi)).log10()
    }

    #[test]
    fn q_factor_reference_points() {
        assert!(q_factor_db(0.158655).unwrap().abs() < 0.01);
        assert!((q_factor_db(0.02275).unwrap() - 6.02).abs() < 0.01);
        for b in [1e-9, 1e-4, 0.02275, 0.158655, 0.4] {
            assert!((q_factor_db(b).unwrap() - q_oracle_db(b)).abs() < 1e-8);
        }
        for q in [0.5f64, 1.0, 2.0, 3.0, 4.0] {
            let b = 0.5 * erfc(q / 2f64.sqrt());
            assert!((q_factor_db(b).unwrap() - 20.0 * q.log10()).abs() < 0.01);
        }
        assert!(q_factor_db(0.0).is_err());
        assert!(q_factor_db(0.5).is_err());
        assert!(q_factor_db(-0.1).is_err());
    }

    #[test]
    fn erfc_inverse_accuracy() {
        for y in [1e-12, 1e-6, 0.01, 0.3, 0.9, 1.0, 1.5] {
            let x = erfc_inverse(y);
            assert!(((erfc(x) - y) / y).abs() < 1e-10, "y={y}");
        }
    }

    #[test]
    fn evm_cases() {
        let r: Vec<_> = (0..64).map(|i| Complex64::new(i as f64, 1.0)).collect();
        assert_eq!(evm(&r, &r).unwrap(), 0.0);
        let scaled: Vec<_> = r.iter().map(|v| v * 1.01).collect();
        assert!((evm(&scaled, &r).unwrap() - 0.01).abs() < 1e-12);
        // error orthogonal to each reference sample, relative power 1e-4
        let ortho: Vec<_> = r.iter().map(|v| v + v * Complex64::new(0.0, 0.01)).collect();
        assert!((evm(&ortho, &r).unwrap() - 0.01).abs() < 1e-12);
        assert!(evm(&r, &vec![Complex64::new(0.0, 0.0); 64]).is_err());
    }

    #[test]
    fn random_bits_give_half_ber() {
        let n = 1 << 16;
        let a = mt19937_bits(1, n);
        let b = mt19937_bits(2, n);
        let e = ber(&a, &b).unwrap();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((e - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn frame_layout() {
        let f = SymbolFrame::generate(7, 100);
        assert_eq!(f.bits_x.len(), 400);
        assert_eq!(f.tx_y.len(), 100);
        assert_eq!(dual_pol_ber(f.symbols(), &f).unwrap(), 0.0);
        assert_eq!(dual_pol_evm(f.symbols(), &f).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip_and_ordering() {
        let reports = vec![
            QReport::new(EqualizerId::Dbp, 1.0, 0.01, 0.2, 100).unwrap(),
            QReport::new(EqualizerId::Cdc, 2.0, 0.02, 0.3, 100).unwrap(),
            QReport::new(EqualizerId::Cdc, -1.0, 0.0, 0.1, 100).unwrap(),
        ];
        let csv = reports_to_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "equalizer,power_dbm,ber,q_db,evm,n_symbols");
        assert!(lines[1].starts_with("CDC,-1.00,"));
        assert!(lines[2].starts_with("CDC,2.00,"));
        assert!(lines[3].starts_with("DBP,"));
        let parsed = parse_reports_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 3);
        assert!(parsed[0].q_db.is_infinite());
        assert!(QReport::new(EqualizerId::Cdc, 0.0, 0.7, 0.1, 1).is_err());
        assert!(QReport::new(EqualizerId::Cdc, 0.0, 0.1, 0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn map_demap_round_trip(raw in proptest::collection::vec(0u8..2, 0..64)) {
            let n = raw.len() / 4 * 4;
            let b = &raw[..n];
            prop_assert_eq!(demap_16qam_hard(&map_16qam(b).unwrap()), b.to_vec());
        }

        #[test]
        fn q_is_monotone(a in 1e-6f64..0.49, b in 1e-6f64..0.49) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(q_factor_db(lo).unwrap() > q_factor_db(hi).unwrap());
        }
    }
}
