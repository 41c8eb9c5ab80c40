//! The JPEG linear maps: blocking, 2-D DCT basis, zigzag, quantization, and
//! their composites for encoding and decoding single image planes.
//!
//! Index conventions: a plane is `(height, width)`; a coefficient plane is
//! `(block_rows, block_cols, 64)` with the last axis in zigzag order. Block
//! row `x = h / 8`, block column `y = w / 8`, offset `(m, n) = (h % 8, w % 8)`.
//! DCT frequencies `(alpha, beta)` pair with `(m, n)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{contract, DenseTensor, Scalar};

/// Natural (row-major `8 * alpha + beta`) index of each zigzag position.
pub const ZIGZAG_TO_NATURAL: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Quantized, zigzag-ordered coefficients of one plane: `(block_rows, block_cols, 64)`.
pub type CoefficientPlane = DenseTensor<f64>;

const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69,
    56, 14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104,
    113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const ANNEX_K_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99,
    99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// 64 quantization divisors in zigzag order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u16>", into = "Vec<u16>")]
pub struct QuantTable {
    q: [u16; 64],
}

impl QuantTable {
    /// Builds a table from 64 zigzag-ordered divisors in `1..=255`.
    pub fn new(values: &[u16]) -> Result<Self> {
        if values.len() != 64 {
            return Err(Error::InvalidQuant(format!("expected 64 entries, got {}", values.len())));
        }
        if let Some(k) = values.iter().position(|&v| v == 0 || v > 255) {
            return Err(Error::InvalidQuant(format!("entry {k} = {} outside 1..=255", values[k])));
        }
        let mut q = [0u16; 64];
        q.copy_from_slice(values);
        Ok(QuantTable { q })
    }

    /// The identity table: no quantization scaling at all.
    pub fn ones() -> Self {
        QuantTable { q: [1; 64] }
    }

    fn from_natural(natural: &[u16; 64]) -> Self {
        let mut q = [0u16; 64];
        for (k, &nat) in ZIGZAG_TO_NATURAL.iter().enumerate() {
            q[k] = natural[nat];
        }
        QuantTable { q }
    }

    /// ITU-T T.81 Annex K luminance table.
    pub fn annex_k_luma() -> Self {
        Self::from_natural(&ANNEX_K_LUMA)
    }

    /// ITU-T T.81 Annex K chrominance table.
    pub fn annex_k_chroma() -> Self {
        Self::from_natural(&ANNEX_K_CHROMA)
    }

    /// Annex K luminance table scaled with the IJG quality formula.
    pub fn luma_quality(quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::InvalidQuant(format!("quality {quality} outside 1..=100")));
        }
        let quality = quality as u32;
        let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
        let mut natural = [0u16; 64];
        for (dst, &base) in natural.iter_mut().zip(&ANNEX_K_LUMA) {
            *dst = ((base as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        Ok(Self::from_natural(&natural))
    }

    pub fn values(&self) -> &[u16; 64] {
        &self.q
    }

    pub fn get(&self, k: usize) -> f64 {
        self.q[k] as f64
    }

    pub fn max(&self) -> u16 {
        *self.q.iter().max().unwrap()
    }

    /// Factor turning a stored DC coefficient into the block mean: `q0 / 8`.
    pub fn dc_to_mean(&self) -> f64 {
        self.get(0) / 8.0
    }
}

impl TryFrom<Vec<u16>> for QuantTable {
    type Error = Error;

    fn try_from(v: Vec<u16>) -> Result<Self> {
        QuantTable::new(&v)
    }
}

impl From<QuantTable> for Vec<u16> {
    fn from(q: QuantTable) -> Vec<u16> {
        q.q.to_vec()
    }
}

/// Pixel dimensions of one plane, both multiples of 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneGeometry {
    height: usize,
    width: usize,
}

impl PlaneGeometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(8) || !width.is_multiple_of(8) {
            return Err(Error::GeometryError(format!(
                "{height}x{width} plane is not a positive multiple of 8 in both dimensions"
            )));
        }
        Ok(PlaneGeometry { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_rows(&self) -> usize {
        self.height / 8
    }

    pub fn block_cols(&self) -> usize {
        self.width / 8
    }

    pub fn num_blocks(&self) -> usize {
        self.block_rows() * self.block_cols()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn coefficients(&self) -> usize {
        self.num_blocks() * 64
    }

    /// Geometry after a convolution with the given stride.
    pub fn strided(&self, stride: usize) -> Result<Self> {
        if !self.height.is_multiple_of(stride) || !self.width.is_multiple_of(stride) {
            return Err(Error::GeometryError(format!("{self:?} not divisible by stride {stride}")));
        }
        PlaneGeometry::new(self.height / stride, self.width / stride)
    }
}

/// Blocking map `B`, shape `(height, width, block_rows, block_cols, 8, 8)`.
pub fn build_blocking(geometry: PlaneGeometry) -> Result<DenseTensor<f64>> {
    let mut b = DenseTensor::zeros(&[
        geometry.height,
        geometry.width,
        geometry.block_rows(),
        geometry.block_cols(),
        8,
        8,
    ])?;
    for h in 0..geometry.height {
        for w in 0..geometry.width {
            b.set(&[h, w, h / 8, w / 8, h % 8, w % 8], 1.0);
        }
    }
    Ok(b)
}

fn dct_norm(u: usize) -> f64 {
    if u == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// One entry of the orthonormal 2-D DCT-II basis.
pub fn dct_entry(m: usize, n: usize, alpha: usize, beta: usize) -> f64 {
    0.25 * dct_norm(alpha)
        * dct_norm(beta)
        * ((2 * m + 1) as f64 * alpha as f64 * PI / 16.0).cos()
        * ((2 * n + 1) as f64 * beta as f64 * PI / 16.0).cos()
}

/// DCT basis `D`, shape `(8, 8, 8, 8)` indexed `[m, n, alpha, beta]`.
pub fn build_dct_basis() -> DenseTensor<f64> {
    DenseTensor::from_fn(&[8, 8, 8, 8], |i| dct_entry(i[0], i[1], i[2], i[3])).expect("static shape")
}

/// Zigzag position of each natural frequency index, computed by walking the
/// anti-diagonals in alternating direction.
pub fn zigzag_positions() -> [usize; 64] {
    let mut pos = [0usize; 64];
    let mut k = 0;
    for d in 0..15usize {
        let lo = d.saturating_sub(7);
        let hi = d.min(7);
        let rows: Vec<usize> = if d % 2 == 0 { (lo..=hi).rev().collect() } else { (lo..=hi).collect() };
        for alpha in rows {
            let beta = d - alpha;
            pos[alpha * 8 + beta] = k;
            k += 1;
        }
    }
    pos
}

/// Zigzag permutation `Z`, shape `(8, 8, 64)`.
pub fn build_zigzag() -> DenseTensor<f64> {
    let pos = zigzag_positions();
    DenseTensor::from_fn(&[8, 8, 64], |i| if pos[i[0] * 8 + i[1]] == i[2] { 1.0 } else { 0.0 })
        .expect("static shape")
}

/// Diagonal quantization maps `(S, S_inv)`, each `(64, 64)`.
pub fn build_quant_scale(quant: &QuantTable) -> (DenseTensor<f64>, DenseTensor<f64>) {
    let s = DenseTensor::from_fn(&[64, 64], |i| if i[0] == i[1] { 1.0 / quant.get(i[0]) } else { 0.0 });
    let s_inv = DenseTensor::from_fn(&[64, 64], |i| if i[0] == i[1] { quant.get(i[0]) } else { 0.0 });
    (s.expect("static shape"), s_inv.expect("static shape"))
}

/// Per-block forward map `D·Z·S`, shape `(8, 8, 64)`: pixel offset to coefficient.
pub fn block_forward(quant: &QuantTable) -> DenseTensor<f64> {
    let (s, _) = build_quant_scale(quant);
    let dz = contract(&build_dct_basis(), &build_zigzag(), &[(2, 0), (3, 1)]).expect("static shapes");
    contract(&dz, &s, &[(2, 0)]).expect("static shapes")
}

/// Per-block inverse map `D·Z·S̃`, shape `(64, 8, 8)`: coefficient to pixel offset.
pub fn block_inverse(quant: &QuantTable) -> DenseTensor<f64> {
    let (_, s_inv) = build_quant_scale(quant);
    let dz = contract(&build_dct_basis(), &build_zigzag(), &[(2, 0), (3, 1)]).expect("static shapes");
    // (m, n, gamma) x (k, gamma) -> (m, n, k) -> (k, m, n)
    contract(&dz, &s_inv, &[(2, 1)])
        .and_then(|t| t.permute(&[2, 0, 1]))
        .expect("static shapes")
}

/// Forward map `J = B·D·Z·S`, shape `(block_rows, block_cols, 64, height, width)`.
pub fn compose_forward(geometry: PlaneGeometry, quant: &QuantTable) -> Result<DenseTensor<f64>> {
    let b = build_blocking(geometry)?;
    let per_block = block_forward(quant);
    // (h, w, x, y, m, n) x (m, n, k) -> (h, w, x, y, k)
    let j = contract(&b, &per_block, &[(4, 0), (5, 1)])?;
    j.permute(&[2, 3, 4, 0, 1])
}

/// Inverse map `J̃ = B·D·Z·S̃`, same index layout as [`compose_forward`].
pub fn compose_inverse(geometry: PlaneGeometry, quant: &QuantTable) -> Result<DenseTensor<f64>> {
    let b = build_blocking(geometry)?;
    let per_block = block_inverse(quant);
    // (h, w, x, y, m, n) x (k, m, n) -> (h, w, x, y, k)
    let j = contract(&b, &per_block, &[(4, 1), (5, 2)])?;
    j.permute(&[2, 3, 4, 0, 1])
}

/// Precomputed forward and inverse JPEG maps for one geometry and table.
#[derive(Debug, Clone)]
pub struct JpegTransformPair {
    pub forward: DenseTensor<f64>,
    pub inverse: DenseTensor<f64>,
    pub geometry: PlaneGeometry,
    pub quant: QuantTable,
}

impl JpegTransformPair {
    pub fn new(geometry: PlaneGeometry, quant: QuantTable) -> Result<Self> {
        Ok(JpegTransformPair {
            forward: compose_forward(geometry, &quant)?,
            inverse: compose_inverse(geometry, &quant)?,
            geometry,
            quant,
        })
    }
}

/// Nearest integer, ties away from zero.
pub fn round_coefficient(v: f64) -> f64 {
    v.round()
}

/// Encodes a `(height, width)` plane into a coefficient plane.
pub fn encode_plane(plane: &DenseTensor<f64>, pair: &JpegTransformPair, round: bool) -> Result<CoefficientPlane> {
    let g = pair.geometry;
    if plane.shape() != [g.height, g.width] {
        return Err(Error::GeometryError(format!(
            "plane {:?} does not match geometry {}x{}",
            plane.shape(),
            g.height,
            g.width
        )));
    }
    let out = contract(&pair.forward, plane, &[(3, 0), (4, 1)])?;
    Ok(if round { out.map(round_coefficient) } else { out })
}

/// Decodes a coefficient plane back to pixels. No rounding is applied.
pub fn decode_plane(coeffs: &CoefficientPlane, pair: &JpegTransformPair) -> Result<DenseTensor<f64>> {
    let g = pair.geometry;
    if coeffs.shape() != [g.block_rows(), g.block_cols(), 64] {
        return Err(Error::GeometryError(format!(
            "coefficients {:?} do not match geometry {}x{}",
            coeffs.shape(),
            g.height,
            g.width
        )));
    }
    contract(coeffs, &pair.inverse, &[(0, 0), (1, 1), (2, 2)])
}

/// Block-factored codec: `J` applied as a reblocking permutation followed by
/// the per-block `(64 × 64)` map, which avoids the dense `pixels × coefficients`
/// product when many planes share one geometry.
#[derive(Debug, Clone)]
pub struct BlockCodec {
    pub geometry: PlaneGeometry,
    pub quant: QuantTable,
    forward: Vec<f64>,
    inverse: Vec<f64>,
}

impl BlockCodec {
    pub fn new(geometry: PlaneGeometry, quant: QuantTable) -> Self {
        BlockCodec {
            geometry,
            quant,
            forward: block_forward(&quant).into_data(),
            inverse: block_inverse(&quant).into_data(),
        }
    }

    /// Encodes `count` consecutive planes stored row-major in `planes`.
    pub fn encode_planes(&self, planes: &[f64]) -> Vec<f64> {
        let g = self.geometry;
        assert_eq!(planes.len() % g.pixels(), 0);
        let count = planes.len() / g.pixels();
        let nb = g.num_blocks();
        let mut blocked = vec![0.0; planes.len()];
        let (rows, cols, w) = (g.block_rows(), g.block_cols(), g.width);
        for p in 0..count {
            let src = &planes[p * g.pixels()..(p + 1) * g.pixels()];
            let dst = &mut blocked[p * g.pixels()..(p + 1) * g.pixels()];
            for x in 0..rows {
                for y in 0..cols {
                    let b = (x * cols + y) * 64;
                    for m in 0..8 {
                        let row = (x * 8 + m) * w + y * 8;
                        dst[b + m * 8..b + m * 8 + 8].copy_from_slice(&src[row..row + 8]);
                    }
                }
            }
        }
        let mut out = vec![0.0; planes.len()];
        f64::gemm(count * nb, 64, 64, &blocked, &self.forward, &mut out, false);
        out
    }

    /// Decodes `count` consecutive coefficient planes into pixel planes.
    pub fn decode_planes(&self, coeffs: &[f64]) -> Vec<f64> {
        let g = self.geometry;
        assert_eq!(coeffs.len() % g.coefficients(), 0);
        let count = coeffs.len() / g.coefficients();
        let nb = g.num_blocks();
        let mut blocked = vec![0.0; coeffs.len()];
        f64::gemm(count * nb, 64, 64, coeffs, &self.inverse, &mut blocked, false);
        let mut out = vec![0.0; coeffs.len()];
        let (rows, cols, w) = (g.block_rows(), g.block_cols(), g.width);
        for p in 0..count {
            let src = &blocked[p * g.pixels()..(p + 1) * g.pixels()];
            let dst = &mut out[p * g.pixels()..(p + 1) * g.pixels()];
            for x in 0..rows {
                for y in 0..cols {
                    let b = (x * cols + y) * 64;
                    for m in 0..8 {
                        let row = (x * 8 + m) * w + y * 8;
                        dst[row..row + 8].copy_from_slice(&src[b + m * 8..b + m * 8 + 8]);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> DenseTensor<f64> {
        DenseTensor::from_fn(&[h, w], |_| rng.gen_range(-128.0..128.0)).unwrap()
    }

    #[test]
    fn blocking_single_block_is_identity() {
        let b = build_blocking(PlaneGeometry::new(8, 8).unwrap()).unwrap();
        for h in 0..8 {
            for w in 0..8 {
                assert_eq!(b.get(&[h, w, 0, 0, h, w]), 1.0);
            }
        }
        assert_eq!(b.data().iter().sum::<f64>(), 64.0);
    }

    #[test]
    fn blocking_places_pixel() {
        let b = build_blocking(PlaneGeometry::new(16, 8).unwrap()).unwrap();
        assert_eq!(b.get(&[9, 3, 1, 0, 1, 3]), 1.0);
        assert_eq!(b.data().iter().sum::<f64>(), 128.0);
        // Exactly one 1 per source pixel and per destination slot.
        let per_pixel = b.reshape(&[128, 128]).unwrap();
        for r in 0..128 {
            let row: f64 = (0..128).map(|c| per_pixel.get(&[r, c])).sum();
            let col: f64 = (0..128).map(|c| per_pixel.get(&[c, r])).sum();
            assert_eq!((row, col), (1.0, 1.0));
        }
    }

    #[test]
    fn geometry_rejects_unaligned() {
        assert!(matches!(PlaneGeometry::new(12, 8), Err(Error::GeometryError(_))));
        assert!(matches!(PlaneGeometry::new(0, 8), Err(Error::GeometryError(_))));
    }

    #[test]
    fn dct_dc_basis_is_one_eighth() {
        let d = build_dct_basis();
        for m in 0..8 {
            for n in 0..8 {
                assert!((d.get(&[m, n, 0, 0]) - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dct_of_constant_block() {
        let d = build_dct_basis();
        let ones = DenseTensor::new(vec![8, 8], vec![1.0; 64]).unwrap();
        let c = contract(&ones, &d, &[(0, 0), (1, 1)]).unwrap();
        assert!((c.get(&[0, 0]) - 8.0).abs() < 1e-12);
        for k in 1..64 {
            assert!(c.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = build_dct_basis().reshape(&[64, 64]).unwrap();
        let dt = d.permute(&[1, 0]).unwrap();
        let eye = contract(&d, &dt, &[(1, 0)]).unwrap();
        let expect = DenseTensor::<f64>::identity(64).unwrap();
        assert!(eye.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn zigzag_matches_standard_table() {
        let pos = zigzag_positions();
        for (k, &nat) in ZIGZAG_TO_NATURAL.iter().enumerate() {
            assert_eq!(pos[nat], k);
        }
        let z = build_zigzag();
        assert_eq!(z.get(&[0, 0, 0]), 1.0);
        assert_eq!(z.get(&[0, 1, 1]), 1.0);
        assert_eq!(z.get(&[1, 0, 2]), 1.0);
        assert_eq!(z.get(&[7, 7, 63]), 1.0);
        let flat = z.reshape(&[64, 64]).unwrap();
        for i in 0..64 {
            let row: f64 = (0..64).map(|j| flat.get(&[i, j])).sum();
            let col: f64 = (0..64).map(|j| flat.get(&[j, i])).sum();
            assert_eq!((row, col), (1.0, 1.0));
        }
    }

    #[test]
    fn quant_scale_cases() {
        let (s, s_inv) = build_quant_scale(&QuantTable::ones());
        assert_eq!(s, DenseTensor::identity(64).unwrap());
        assert_eq!(s_inv, DenseTensor::identity(64).unwrap());

        let mut q = [1u16; 64];
        q[0] = 8;
        let (s, _) = build_quant_scale(&QuantTable::new(&q).unwrap());
        let mut v = vec![0.0; 64];
        v[0] = 16.0;
        let v = DenseTensor::new(vec![64], v).unwrap();
        let out = contract(&v, &s, &[(0, 0)]).unwrap();
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn quant_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let quant = QuantTable::luma_quality(30).unwrap();
        let (s, s_inv) = build_quant_scale(&quant);
        for _ in 0..50 {
            let v = DenseTensor::from_fn(&[64], |_| rng.gen_range(-500.0..500.0)).unwrap();
            let back = contract(&contract(&v, &s, &[(0, 0)]).unwrap(), &s_inv, &[(0, 0)]).unwrap();
            assert!(back.max_abs_diff(&v).unwrap() < 1e-12);
        }
    }

    #[test]
    fn quant_table_validation() {
        assert!(QuantTable::new(&[0u16; 64]).is_err());
        assert!(QuantTable::new(&[256u16; 64]).is_err());
        assert!(QuantTable::new(&[1u16; 63]).is_err());
        let luma = QuantTable::annex_k_luma();
        assert_eq!(&luma.values()[..4], &[16, 11, 12, 14]);
        assert_eq!(QuantTable::luma_quality(50).unwrap(), luma);
    }

    #[test]
    fn forward_shape_for_32() {
        let g = PlaneGeometry::new(32, 32).unwrap();
        let j = compose_forward(g, &QuantTable::ones()).unwrap();
        assert_eq!(j.shape(), &[4, 4, 64, 32, 32]);
    }

    #[test]
    fn constant_plane_has_only_dc() {
        let pair = JpegTransformPair::new(PlaneGeometry::new(8, 8).unwrap(), QuantTable::ones()).unwrap();
        let c = 3.5;
        let plane = DenseTensor::new(vec![8, 8], vec![c; 64]).unwrap();
        let coeffs = encode_plane(&plane, &pair, false).unwrap();
        assert!((coeffs.data()[0] - 8.0 * c).abs() < 1e-12);
        assert!(coeffs.data()[1..].iter().all(|v| v.abs() < 1e-12));

        let pair = JpegTransformPair::new(PlaneGeometry::new(16, 16).unwrap(), QuantTable::ones()).unwrap();
        let plane = DenseTensor::new(vec![16, 16], vec![128.0; 256]).unwrap();
        let coeffs = encode_plane(&plane, &pair, true).unwrap();
        for b in 0..4 {
            assert_eq!(coeffs.data()[b * 64], 1024.0);
            assert!(coeffs.data()[b * 64 + 1..(b + 1) * 64].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_and_dc_only_decode() {
        let pair = JpegTransformPair::new(PlaneGeometry::new(8, 8).unwrap(), QuantTable::ones()).unwrap();
        let zero = DenseTensor::zeros(&[1, 1, 64]).unwrap();
        assert!(decode_plane(&zero, &pair).unwrap().data().iter().all(|&v| v == 0.0));
        let zero_plane = DenseTensor::zeros(&[8, 8]).unwrap();
        assert!(encode_plane(&zero_plane, &pair, true).unwrap().data().iter().all(|&v| v == 0.0));
        let mut dc = DenseTensor::zeros(&[1, 1, 64]).unwrap();
        dc.set(&[0, 0, 0], 8.0);
        let plane = decode_plane(&dc, &pair).unwrap();
        assert!(plane.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = PlaneGeometry::new(16, 16).unwrap();
        for quant in [QuantTable::ones(), QuantTable::annex_k_luma()] {
            let pair = JpegTransformPair::new(g, quant).unwrap();
            for _ in 0..20 {
                let f = random_plane(&mut rng, 16, 16);
                let h = random_plane(&mut rng, 16, 16);
                let cf = encode_plane(&f, &pair, false).unwrap();
                let back = decode_plane(&cf, &pair).unwrap();
                assert!(back.max_abs_diff(&f).unwrap() < 1e-10);
                let ch = encode_plane(&h, &pair, false).unwrap();
                let sum = encode_plane(&f.add(&h).unwrap(), &pair, false).unwrap();
                assert!(sum.max_abs_diff(&cf.add(&ch).unwrap()).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_after_forward_is_identity_on_coefficients() {
        let g = PlaneGeometry::new(16, 8).unwrap();
        let pair = JpegTransformPair::new(g, QuantTable::luma_quality(75).unwrap()).unwrap();
        let prod = contract(&pair.inverse, &pair.forward, &[(3, 3), (4, 4)]).unwrap();
        let n = g.coefficients();
        let eye = DenseTensor::<f64>::identity(n).unwrap();
        assert!(prod.reshape(&[n, n]).unwrap().max_abs_diff(&eye).unwrap() < 1e-10);
    }

    #[test]
    fn block_codec_matches_dense_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = PlaneGeometry::new(16, 24).unwrap();
        let quant = QuantTable::luma_quality(60).unwrap();
        let pair = JpegTransformPair::new(g, quant).unwrap();
        let codec = BlockCodec::new(g, quant);
        let a = random_plane(&mut rng, 16, 24);
        let b = random_plane(&mut rng, 16, 24);
        let mut both = a.data().to_vec();
        both.extend_from_slice(b.data());
        let enc = codec.encode_planes(&both);
        let dense_a = encode_plane(&a, &pair, false).unwrap();
        let dense_b = encode_plane(&b, &pair, false).unwrap();
        let n = g.coefficients();
        for i in 0..n {
            assert!((enc[i] - dense_a.data()[i]).abs() < 1e-10);
            assert!((enc[n + i] - dense_b.data()[i]).abs() < 1e-10);
        }
        let dec = codec.decode_planes(&enc);
        for (x, y) in dec.iter().zip(&both) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn geometry_errors_on_mismatched_plane() {
        let pair = JpegTransformPair::new(PlaneGeometry::new(8, 8).unwrap(), QuantTable::ones()).unwrap();
        let plane = DenseTensor::zeros(&[16, 8]).unwrap();
        assert!(matches!(encode_plane(&plane, &pair, false), Err(Error::GeometryError(_))));
        let coeffs = DenseTensor::zeros(&[2, 1, 64]).unwrap();
        assert!(matches!(decode_plane(&coeffs, &pair), Err(Error::GeometryError(_))));
    }
}
