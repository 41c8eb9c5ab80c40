//! Baseline JPEG reader: entropy decoding only.
//!
//! The output is the quantized coefficients exactly as stored, in zigzag
//! order, with DC prediction resolved. Sequential Huffman DCT at 8-bit
//! precision (SOF0 and SOF1) is supported, including restart intervals,
//! interleaved and single-component scans, and any sampling factors.

use crate::error::{Error, Result};
use crate::ops::CoefficientTensor;
use crate::tensor::DenseTensor;
use crate::transform::{BlockCodec, CoefficientPlane, PlaneGeometry, QuantTable};

const SOI: u8 = 0xD8;
const EOI: u8 = 0xD9;
const SOS: u8 = 0xDA;
const DQT: u8 = 0xDB;
const DNL: u8 = 0xDC;
const DRI: u8 = 0xDD;
const DHT: u8 = 0xC4;
const DAC: u8 = 0xCC;

/// Hard decode bound on any stored coefficient.
pub const COEFFICIENT_RANGE: std::ops::RangeInclusive<i32> = -2048..=2047;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HuffmanClass {
    Dc,
    Ac,
}

/// Canonical Huffman table as carried by a DHT segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    pub class: HuffmanClass,
    pub id: u8,
    pub counts: [u8; 16],
    pub symbols: Vec<u8>,
    // Per code length: largest code, or -1 when no codes of that length.
    maxcode: [i32; 17],
    // Per code length: index of the first symbol minus the first code.
    valoffset: [i32; 17],
}

impl HuffmanTable {
    pub fn new(class: HuffmanClass, id: u8, counts: [u8; 16], symbols: Vec<u8>) -> Result<Self> {
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total > 256 || total != symbols.len() {
            return Err(Error::CorruptStream(format!("Huffman table with {total} codes and {} symbols", symbols.len())));
        }
        let mut maxcode = [-1i32; 17];
        let mut valoffset = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = counts[len - 1] as i32;
            if n > 0 {
                valoffset[len] = k - code;
                code += n;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(Error::CorruptStream("Huffman code lengths overflow the code space".into()));
            }
            code <<= 1;
        }
        Ok(HuffmanTable { class, id, counts, symbols, maxcode, valoffset })
    }

    /// Canonical codes as `(length, code, symbol)`.
    pub fn codes(&self) -> Vec<(u8, u16, u8)> {
        let mut out = Vec::with_capacity(self.symbols.len());
        let mut code = 0u16;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..self.counts[len as usize - 1] {
                out.push((len, code, self.symbols[k]));
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        out
    }

    fn decode(&self, bits: &mut BitReader) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | bits.bit()? as i32;
            if code <= self.maxcode[len] {
                return Ok(self.symbols[(code + self.valoffset[len]) as usize]);
            }
        }
        Err(Error::CorruptStream("invalid Huffman code".into()))
    }
}

/// One image component with its coefficient grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JpegComponent {
    pub id: u8,
    pub h_samp: u8,
    pub v_samp: u8,
    pub quant: QuantTable,
    /// Sample dimensions of this component.
    pub width: usize,
    pub height: usize,
    /// Block grid covering the samples, `ceil(dim / 8)`.
    pub block_rows: usize,
    pub block_cols: usize,
    /// `(block_rows, block_cols, 64)`, zigzag order, absolute DC.
    pub coefficients: Vec<i32>,
    table_index: u8,
    // Storage grid padded to whole MCUs.
    padded_cols: usize,
    padded: Vec<i32>,
}

impl JpegComponent {
    pub fn geometry(&self) -> PlaneGeometry {
        PlaneGeometry::new(self.block_rows * 8, self.block_cols * 8).expect("non-empty component")
    }

    /// Coefficients as a `(block_rows, block_cols, 64)` real plane.
    pub fn plane(&self) -> CoefficientPlane {
        DenseTensor::new(
            vec![self.block_rows, self.block_cols, 64],
            self.coefficients.iter().map(|&c| c as f64).collect(),
        )
        .expect("sized at parse time")
    }

    /// Dequantize, inverse DCT, undo the level shift, round and clamp,
    /// cropped to the component's sample dimensions (row-major).
    pub fn reconstruct(&self) -> Vec<u8> {
        let g = self.geometry();
        let coeffs: Vec<f64> = self.coefficients.iter().map(|&c| c as f64).collect();
        let pixels = BlockCodec::new(g, self.quant).decode_planes(&coeffs);
        let mut out = Vec::with_capacity(self.width * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push((pixels[r * g.width() + c] + 128.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedJpeg {
    pub width: usize,
    pub height: usize,
    pub components: Vec<JpegComponent>,
    pub restart_interval: u16,
}

impl ParsedJpeg {
    pub fn is_subsampled(&self) -> bool {
        self.components.iter().any(|c| c.h_samp != self.components[0].h_samp || c.v_samp != self.components[0].v_samp)
    }
}

/// Stacks the component planes into a `(1, channels, rows, cols, 64)`
/// network input. Components with a different table are re-expressed under
/// the first component's table. The planes hold level-shifted pixels.
pub fn coefficients_for_network(parsed: &ParsedJpeg) -> Result<CoefficientTensor<f64>> {
    if parsed.is_subsampled() {
        return Err(Error::SubsamplingUnsupported);
    }
    let first = &parsed.components[0];
    let target = first.quant;
    let (rows, cols) = (first.block_rows, first.block_cols);
    let mut data = Vec::with_capacity(parsed.components.len() * rows * cols * 64);
    for c in &parsed.components {
        for block in c.coefficients.chunks_exact(64) {
            data.extend((0..64).map(|k| block[k] as f64 * c.quant.get(k) / target.get(k)));
        }
    }
    CoefficientTensor::new(DenseTensor::new(vec![1, parsed.components.len(), rows, cols, 64], data)?, target)
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
    // Set once a marker is reached inside entropy-coded data.
    at_marker: bool,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader { data, pos, acc: 0, nbits: 0, at_marker: false }
    }

    fn fill(&mut self) -> Result<()> {
        if self.at_marker {
            return Err(Error::CorruptStream("entropy-coded data ran into a marker".into()));
        }
        let b = *self.data.get(self.pos).ok_or(Error::TruncatedFile)?;
        if b == 0xFF {
            let next = *self.data.get(self.pos + 1).ok_or(Error::TruncatedFile)?;
            if next == 0x00 {
                self.pos += 2;
            } else {
                self.at_marker = true;
                return Err(Error::CorruptStream("entropy-coded data ran into a marker".into()));
            }
        } else {
            self.pos += 1;
        }
        self.acc = (self.acc << 8) | b as u32;
        self.nbits += 8;
        Ok(())
    }

    fn bit(&mut self) -> Result<u32> {
        if self.nbits == 0 {
            self.fill()?;
        }
        self.nbits -= 1;
        Ok((self.acc >> self.nbits) & 1)
    }

    fn bits(&mut self, n: u32) -> Result<u32> {
        while self.nbits < n {
            self.fill()?;
        }
        self.nbits -= n;
        Ok((self.acc >> self.nbits) & ((1u32 << n) - 1))
    }

    /// Drops padding bits and consumes the expected restart marker.
    fn restart(&mut self, expected: u8) -> Result<()> {
        self.nbits = 0;
        self.acc = 0;
        self.at_marker = false;
        let marker = next_marker(self.data, &mut self.pos)?;
        if marker != 0xD0 + expected {
            return Err(Error::CorruptStream(format!("expected RST{expected}, found marker {marker:#04X}")));
        }
        Ok(())
    }

    /// Position of the marker ending the scan.
    fn finish(self) -> usize {
        self.pos
    }
}

/// Decodes a magnitude category and its extra bits into a signed value.
fn extend(bits: u32, size: u32) -> i32 {
    if size == 0 {
        0
    } else if bits < (1 << (size - 1)) {
        bits as i32 - (1 << size) + 1
    } else {
        bits as i32
    }
}

/// Reads the marker at `pos` (skipping fill bytes) and advances past it.
fn next_marker(data: &[u8], pos: &mut usize) -> Result<u8> {
    match data.get(*pos) {
        None => return Err(Error::TruncatedFile),
        Some(0xFF) => {}
        Some(b) => return Err(Error::CorruptStream(format!("expected marker, found byte {b:#04X} at {}", *pos))),
    }
    while data.get(*pos) == Some(&0xFF) {
        *pos += 1;
    }
    let m = *data.get(*pos).ok_or(Error::TruncatedFile)?;
    if m == 0 {
        return Err(Error::CorruptStream(format!("stuffed byte where a marker was expected at {}", *pos)));
    }
    *pos += 1;
    Ok(m)
}

fn segment<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    if data.len() < *pos + 2 {
        return Err(Error::TruncatedFile);
    }
    let len = u16::from_be_bytes([data[*pos], data[*pos + 1]]) as usize;
    if len < 2 {
        return Err(Error::CorruptStream(format!("segment length {len}")));
    }
    let body = data.get(*pos + 2..*pos + len).ok_or(Error::TruncatedFile)?;
    *pos += len;
    Ok(body)
}

struct Frame {
    width: usize,
    height: usize,
    hmax: usize,
    vmax: usize,
    components: Vec<JpegComponent>,
}

struct ScanComponent {
    index: usize,
    dc: usize,
    ac: usize,
}

/// Parses a baseline JPEG file into quantized coefficient planes.
pub fn parse_jpeg(bytes: &[u8]) -> Result<ParsedJpeg> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err(Error::CorruptStream("missing SOI marker".into()));
    }
    let mut pos = 2;
    let mut qtables: [Option<QuantTable>; 4] = [None; 4];
    let mut dc_tables: [Option<HuffmanTable>; 4] = Default::default();
    let mut ac_tables: [Option<HuffmanTable>; 4] = Default::default();
    let mut frame: Option<Frame> = None;
    let mut restart_interval = 0u16;
    let mut quant_bound = Vec::new();

    loop {
        let marker = next_marker(bytes, &mut pos)?;
        match marker {
            EOI => break,
            0xC0 | 0xC1 => {
                if frame.is_some() {
                    return Err(Error::CorruptStream("multiple frame headers".into()));
                }
                frame = Some(parse_frame(segment(bytes, &mut pos)?)?);
            }
            0xC2 | 0xC3 | 0xC5..=0xC7 => {
                return Err(Error::UnsupportedFormat(format!("SOF{} (only baseline sequential DCT)", marker - 0xC0)))
            }
            0xC9..=0xCB | 0xCD..=0xCF | DAC => {
                return Err(Error::UnsupportedFormat("arithmetic coding".into()))
            }
            DHT => parse_dht(segment(bytes, &mut pos)?, &mut dc_tables, &mut ac_tables)?,
            DQT => parse_dqt(segment(bytes, &mut pos)?, &mut qtables)?,
            DRI => {
                let body = segment(bytes, &mut pos)?;
                if body.len() != 2 {
                    return Err(Error::CorruptStream("DRI length".into()));
                }
                restart_interval = u16::from_be_bytes([body[0], body[1]]);
            }
            SOS => {
                let f = frame.as_mut().ok_or_else(|| Error::CorruptStream("scan before frame header".into()))?;
                let body = segment(bytes, &mut pos)?;
                let scan = parse_scan_header(body, f, &dc_tables, &ac_tables)?;
                for sc in &scan {
                    let c = &mut f.components[sc.index];
                    if !quant_bound.contains(&sc.index) {
                        c.quant = qtables[c.table_index as usize]
                            .ok_or_else(|| Error::CorruptStream(format!("quantization table {} undefined", c.table_index)))?;
                        quant_bound.push(sc.index);
                    }
                }
                pos = decode_scan(bytes, pos, f, &scan, &dc_tables, &ac_tables, restart_interval)?;
            }
            DNL => return Err(Error::UnsupportedFormat("DNL marker".into())),
            0xD0..=0xD7 => return Err(Error::CorruptStream(format!("stray RST{}", marker - 0xD0))),
            0xE0..=0xEF | 0xFE => {
                segment(bytes, &mut pos)?;
            }
            0x01 => {}
            _ => {
                // Unknown marker with a length field.
                segment(bytes, &mut pos)?;
            }
        }
    }

    let f = frame.ok_or_else(|| Error::CorruptStream("no frame header".into()))?;
    if quant_bound.len() != f.components.len() {
        return Err(Error::CorruptStream("component without any scan".into()));
    }
    let components = f
        .components
        .into_iter()
        .map(|mut c| {
            let mut coeffs = Vec::with_capacity(c.block_rows * c.block_cols * 64);
            for r in 0..c.block_rows {
                let start = (r * c.padded_cols) * 64;
                coeffs.extend_from_slice(&c.padded[start..start + c.block_cols * 64]);
            }
            c.coefficients = coeffs;
            c.padded = Vec::new();
            c
        })
        .collect();
    Ok(ParsedJpeg { width: f.width, height: f.height, components, restart_interval })
}

fn parse_frame(body: &[u8]) -> Result<Frame> {
    if body.len() < 6 {
        return Err(Error::CorruptStream("short frame header".into()));
    }
    if body[0] != 8 {
        return Err(Error::UnsupportedFormat(format!("{}-bit precision", body[0])));
    }
    let height = u16::from_be_bytes([body[1], body[2]]) as usize;
    let width = u16::from_be_bytes([body[3], body[4]]) as usize;
    let n = body[5] as usize;
    if height == 0 {
        return Err(Error::UnsupportedFormat("height defined by DNL".into()));
    }
    if width == 0 || n == 0 || n > 4 || body.len() != 6 + 3 * n {
        return Err(Error::CorruptStream("malformed frame header".into()));
    }
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let c = &body[6 + 3 * i..9 + 3 * i];
        let (h, v) = (c[1] >> 4, c[1] & 15);
        if !(1..=4).contains(&h) || !(1..=4).contains(&v) || c[2] > 3 {
            return Err(Error::CorruptStream(format!("component {} sampling {h}x{v} table {}", c[0], c[2])));
        }
        raw.push((c[0], h, v, c[2]));
    }
    let hmax = raw.iter().map(|r| r.1 as usize).max().unwrap();
    let vmax = raw.iter().map(|r| r.2 as usize).max().unwrap();
    let mcu_cols = width.div_ceil(8 * hmax);
    let mcu_rows = height.div_ceil(8 * vmax);
    let components = raw
        .into_iter()
        .map(|(id, h, v, t)| {
            let cw = (width * h as usize).div_ceil(hmax);
            let ch = (height * v as usize).div_ceil(vmax);
            let padded_cols = mcu_cols * h as usize;
            let padded_rows = mcu_rows * v as usize;
            JpegComponent {
                id,
                h_samp: h,
                v_samp: v,
                quant: QuantTable::ones(),
                width: cw,
                height: ch,
                block_rows: ch.div_ceil(8),
                block_cols: cw.div_ceil(8),
                coefficients: Vec::new(),
                table_index: t,
                padded_cols,
                padded: vec![0; padded_rows * padded_cols * 64],
            }
        })
        .collect();
    Ok(Frame { width, height, hmax, vmax, components })
}

fn parse_dqt(mut body: &[u8], tables: &mut [Option<QuantTable>; 4]) -> Result<()> {
    while !body.is_empty() {
        let (precision, id) = (body[0] >> 4, (body[0] & 15) as usize);
        if id > 3 || precision > 1 {
            return Err(Error::CorruptStream(format!("DQT table {id} precision {precision}")));
        }
        let size = if precision == 0 { 64 } else { 128 };
        let raw = body.get(1..1 + size).ok_or_else(|| Error::CorruptStream("short DQT segment".into()))?;
        let values: Vec<u16> = if precision == 0 {
            raw.iter().map(|&b| b as u16).collect()
        } else {
            raw.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
        };
        if values.contains(&0) {
            return Err(Error::CorruptStream("zero quantization divisor".into()));
        }
        if values.iter().any(|&v| v > 255) {
            return Err(Error::UnsupportedFormat("quantization divisor above 255".into()));
        }
        tables[id] = Some(QuantTable::new(&values)?);
        body = &body[1 + size..];
    }
    Ok(())
}

fn parse_dht(mut body: &[u8], dc: &mut [Option<HuffmanTable>; 4], ac: &mut [Option<HuffmanTable>; 4]) -> Result<()> {
    while !body.is_empty() {
        if body.len() < 17 {
            return Err(Error::CorruptStream("short DHT segment".into()));
        }
        let (class, id) = (body[0] >> 4, body[0] & 15);
        if class > 1 || id > 3 {
            return Err(Error::CorruptStream(format!("DHT class {class} id {id}")));
        }
        let mut counts = [0u8; 16];
        counts.copy_from_slice(&body[1..17]);
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        let symbols = body.get(17..17 + total).ok_or_else(|| Error::CorruptStream("short DHT segment".into()))?;
        let class = if class == 0 { HuffmanClass::Dc } else { HuffmanClass::Ac };
        let table = HuffmanTable::new(class, id, counts, symbols.to_vec())?;
        match class {
            HuffmanClass::Dc => dc[id as usize] = Some(table),
            HuffmanClass::Ac => ac[id as usize] = Some(table),
        }
        body = &body[17 + total..];
    }
    Ok(())
}

fn parse_scan_header(
    body: &[u8],
    frame: &Frame,
    dc: &[Option<HuffmanTable>; 4],
    ac: &[Option<HuffmanTable>; 4],
) -> Result<Vec<ScanComponent>> {
    let n = *body.first().ok_or_else(|| Error::CorruptStream("empty scan header".into()))? as usize;
    if n == 0 || n > 4 || body.len() != 4 + 2 * n {
        return Err(Error::CorruptStream("malformed scan header".into()));
    }
    let (ss, se, a) = (body[1 + 2 * n], body[2 + 2 * n], body[3 + 2 * n]);
    if ss != 0 || se != 63 || a != 0 {
        return Err(Error::UnsupportedFormat("spectral selection or successive approximation".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (id, t) = (body[1 + 2 * i], body[2 + 2 * i]);
        let index = frame
            .components
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::CorruptStream(format!("scan references unknown component {id}")))?;
        let (d, a) = ((t >> 4) as usize, (t & 15) as usize);
        if d > 3 || a > 3 || dc[d].is_none() || ac[a].is_none() {
            return Err(Error::CorruptStream(format!("scan uses undefined Huffman tables {d}/{a}")));
        }
        out.push(ScanComponent { index, dc: d, ac: a });
    }
    let blocks_per_mcu: usize = out
        .iter()
        .map(|s| (frame.components[s.index].h_samp * frame.components[s.index].v_samp) as usize)
        .sum();
    if n > 1 && blocks_per_mcu > 10 {
        return Err(Error::CorruptStream("more than 10 blocks per MCU".into()));
    }
    Ok(out)
}

fn decode_block(bits: &mut BitReader, dc: &HuffmanTable, ac: &HuffmanTable, pred: &mut i32, out: &mut [i32]) -> Result<()> {
    let s = dc.decode(bits)? as u32;
    if s > 11 {
        return Err(Error::CorruptStream(format!("DC magnitude category {s}")));
    }
    *pred += extend(bits.bits(s)?, s);
    if !COEFFICIENT_RANGE.contains(pred) {
        return Err(Error::CorruptStream(format!("DC value {} out of range", *pred)));
    }
    out[0] = *pred;
    let mut k = 1;
    while k < 64 {
        let rs = ac.decode(bits)?;
        let (r, s) = ((rs >> 4) as usize, (rs & 15) as u32);
        if s == 0 {
            if r == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += r;
        if k > 63 {
            return Err(Error::CorruptStream("AC run past end of block".into()));
        }
        if s > 10 {
            return Err(Error::CorruptStream(format!("AC magnitude category {s}")));
        }
        out[k] = extend(bits.bits(s)?, s);
        k += 1;
    }
    if k > 64 {
        return Err(Error::CorruptStream("AC run past end of block".into()));
    }
    Ok(())
}

fn decode_scan(
    bytes: &[u8],
    start: usize,
    frame: &mut Frame,
    scan: &[ScanComponent],
    dc: &[Option<HuffmanTable>; 4],
    ac: &[Option<HuffmanTable>; 4],
    restart_interval: u16,
) -> Result<usize> {
    let mut bits = BitReader::new(bytes, start);
    let mut preds = vec![0i32; scan.len()];
    let (mcu_rows, mcu_cols, single) = if scan.len() == 1 {
        let c = &frame.components[scan[0].index];
        (c.height.div_ceil(8), c.width.div_ceil(8), true)
    } else {
        (frame.height.div_ceil(8 * frame.vmax), frame.width.div_ceil(8 * frame.hmax), false)
    };
    let total = mcu_rows * mcu_cols;
    let mut next_rst = 0u8;
    let mut block = [0i32; 64];
    for mcu in 0..total {
        if restart_interval > 0 && mcu > 0 && mcu % restart_interval as usize == 0 {
            bits.restart(next_rst)?;
            next_rst = (next_rst + 1) % 8;
            preds.iter_mut().for_each(|p| *p = 0);
        }
        let (mr, mc) = (mcu / mcu_cols, mcu % mcu_cols);
        for (si, sc) in scan.iter().enumerate() {
            let (dct, act) = (dc[sc.dc].as_ref().unwrap(), ac[sc.ac].as_ref().unwrap());
            let comp = &mut frame.components[sc.index];
            let (h, v) = if single { (1, 1) } else { (comp.h_samp as usize, comp.v_samp as usize) };
            for by in 0..v {
                for bx in 0..h {
                    block.fill(0);
                    decode_block(&mut bits, dct, act, &mut preds[si], &mut block)?;
                    let (row, col) = (mr * v + by, mc * h + bx);
                    let offset = (row * comp.padded_cols + col) * 64;
                    comp.padded[offset..offset + 64].copy_from_slice(&block);
                }
            }
        }
    }
    let mut pos = bits.finish();
    // Tolerate padding before the next marker only in the form of fill bytes.
    while bytes.get(pos).is_some_and(|&b| b != 0xFF) {
        pos += 1;
    }
    if pos >= bytes.len() {
        return Err(Error::TruncatedFile);
    }
    Ok(pos)
}
