//! Volume files: NIfTI-1 (`.nii`, `.nii.gz`) and a raw container (`.fsgv`).
//!
//! NIfTI stores x fastest; the volume axes map as h → x, w → y, d → z.
//! Modality and patient id travel in a JSON sidecar next to NIfTI files
//! (`scan.nii.gz` → `scan.json`). The raw container carries them inline:
//!
//! ```text
//! "FSGVOL01" | u64 LE header length | JSON {dims, spacing_mm, modality, patient_id} | f64 LE values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::{Modality, Volume3D};

pub const RAW_MAGIC: &[u8; 8] = b"FSGVOL01";
const NIFTI_HEADER_LEN: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;
const NIFTI_ECODE_COMMENT: i32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub modality: Modality,
    pub patient_id: String,
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    modality: Modality,
    patient_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Nifti { gz: bool },
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase();
    if name.ends_with(".nii.gz") {
        Ok(Format::Nifti { gz: true })
    } else if name.ends_with(".nii") {
        Ok(Format::Nifti { gz: false })
    } else if name.ends_with(".fsgv") {
        Ok(Format::Raw)
    } else {
        Err(CoreError::Metadata(format!("{}: unsupported extension (use .nii, .nii.gz or .fsgv)", path.display())))
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    for ext in [".nii.gz", ".nii", ".fsgv", ".NII.GZ", ".NII"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name.to_string()
}

/// Sidecar location for a NIfTI file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_file_name(format!("{}.json", stem(path)))
}

/// Reads a volume. For NIfTI, `modality` overrides the sidecar; one of the
/// two must be present. The patient id falls back to the file stem.
pub fn load_volume(path: &Path, modality: Option<Modality>) -> Result<Volume3D> {
    match format_of(path)? {
        Format::Raw => {
            let v = read_raw(path)?;
            match modality {
                Some(m) if m != v.modality() => v.with_data(v.data().to_vec(), m),
                _ => Ok(v),
            }
        }
        Format::Nifti { gz } => {
            let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
            let bytes = if gz || bytes.starts_with(&[0x1f, 0x8b]) {
                let mut out = Vec::new();
                GzDecoder::new(bytes.as_slice())
                    .read_to_end(&mut out)
                    .map_err(|e| CoreError::Metadata(format!("{}: bad gzip stream: {e}", path.display())))?;
                out
            } else {
                bytes
            };
            let (data, dims, spacing) = decode_nifti(&bytes).map_err(|e| match e {
                CoreError::Metadata(m) => CoreError::Metadata(format!("{}: {m}", path.display())),
                other => other,
            })?;
            let side = sidecar_path(path);
            let sidecar: Option<Sidecar> = if side.exists() {
                let text = fs::read_to_string(&side).map_err(|e| CoreError::io(&side, e))?;
                Some(serde_json::from_str(&text).map_err(|e| {
                    CoreError::Metadata(format!("{}: bad sidecar: {e}", side.display()))
                })?)
            } else {
                None
            };
            let modality = modality.or(sidecar.as_ref().map(|s| s.modality)).ok_or_else(|| {
                CoreError::Metadata(format!("{}: no modality given and no sidecar found", path.display()))
            })?;
            let id = sidecar.map(|s| s.patient_id).unwrap_or_else(|| stem(path));
            Volume3D::new(data, dims, spacing, modality, id)
        }
    }
}

/// Writes a volume; NIfTI files get a JSON sidecar.
pub fn save_volume(v: &Volume3D, path: &Path) -> Result<()> {
    match format_of(path)? {
        Format::Raw => write_raw(v, path),
        Format::Nifti { gz } => {
            let bytes = encode_nifti(v);
            let io = |e| CoreError::io(path, e);
            let mut f = fs::File::create(path).map_err(io)?;
            if gz {
                let mut enc = GzEncoder::new(f, Compression::fast());
                enc.write_all(&bytes).map_err(io)?;
                enc.finish().map_err(io)?;
            } else {
                f.write_all(&bytes).map_err(io)?;
            }
            let side = sidecar_path(path);
            let json = serde_json::to_string_pretty(&Sidecar {
                modality: v.modality(),
                patient_id: v.patient_id().to_string(),
            })?;
            fs::write(&side, json).map_err(|e| CoreError::io(&side, e))
        }
    }
}

fn write_raw(v: &Volume3D, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&RawHeader {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        modality: v.modality(),
        patient_id: v.patient_id().to_string(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + v.len() * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

fn read_raw(path: &Path) -> Result<Volume3D> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let bad = |m: &str| CoreError::Metadata(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != RAW_MAGIC {
        return Err(bad("missing FSGVOL01 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let start = 16usize.checked_add(hlen).filter(|&s| s <= bytes.len()).ok_or_else(|| bad("header overruns file"))?;
    let header: RawHeader =
        serde_json::from_slice(&bytes[16..start]).map_err(|e| bad(&format!("bad header: {e}")))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() - start != n * 8 {
        return Err(bad("payload size does not match dims"));
    }
    let data = bytes[start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Volume3D::new(data, header.dims, header.spacing_mm, header.modality, header.patient_id)
}

fn encode_nifti(v: &Volume3D) -> Vec<u8> {
    let [nh, nw, nd] = v.dims();
    let sp = v.spacing_mm();
    let mut h = vec![0u8; NIFTI_VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..4], NIFTI_HEADER_LEN as i32);
    let dim = [3i16, nh as i16, nw as i16, nd as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[70..72], 64); // float64
    LittleEndian::write_i16(&mut h[72..74], 64);
    let pixdim = [1.0f32, sp[0] as f32, sp[1] as f32, sp[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
    }
    // pixdim is f32; an extension carries the exact f64 spacing.
    let mut ext = format!("fuseg3d-spacing:{:?},{:?},{:?}", sp[0], sp[1], sp[2]).into_bytes();
    ext.resize((ext.len() + 8).div_ceil(16) * 16 - 8, 0);
    let vox_offset = NIFTI_VOX_OFFSET + 8 + ext.len();
    LittleEndian::write_f32(&mut h[108..112], vox_offset as f32);
    // scl_slope = 0 means "no scaling".
    h[123] = 2; // xyzt_units: millimetres
    h[148..148 + 7].copy_from_slice(b"fuseg3d");
    LittleEndian::write_i16(&mut h[254..256], 1); // sform_code
    let srow = [[sp[0], 0.0, 0.0, 0.0], [0.0, sp[1], 0.0, 0.0], [0.0, 0.0, sp[2], 0.0]];
    for (r, row) in srow.iter().enumerate() {
        for (c, x) in row.iter().enumerate() {
            LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..], *x as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h[348] = 1;
    let mut esize = [0u8; 8];
    LittleEndian::write_i32(&mut esize[0..4], (8 + ext.len()) as i32);
    LittleEndian::write_i32(&mut esize[4..8], NIFTI_ECODE_COMMENT);
    h.extend_from_slice(&esize);
    h.extend_from_slice(&ext);
    let mut out = h;
    out.reserve(nh * nw * nd * 8);
    for d in 0..nd {
        for w in 0..nw {
            for hh in 0..nh {
                out.extend_from_slice(&v.get(hh, w, d).to_le_bytes());
            }
        }
    }
    out
}

struct NiftiHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    datatype: i16,
    vox_offset: usize,
    slope: f64,
    inter: f64,
}

fn parse_header<B: ByteOrder>(h: &[u8]) -> Result<NiftiHeader> {
    let meta = |m: String| CoreError::Metadata(m);
    let ndim = B::read_i16(&h[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(meta(format!("dim[0] = {ndim} is out of range")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let d = B::read_i16(&h[40 + 2 * i..]);
        if d < 1 {
            return Err(meta(format!("dim[{i}] = {d} is not positive")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(meta(format!("only 3D volumes are supported (dim[{i}] = {d})")));
        }
    }
    let datatype = B::read_i16(&h[70..72]);
    let mut spacing = [0.0; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = B::read_f32(&h[76 + 4 * (i + 1)..]) as f64;
    }
    if ndim < 3 {
        for s in spacing.iter_mut().skip(ndim as usize) {
            if *s <= 0.0 {
                *s = 1.0;
            }
        }
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(meta(format!("missing voxel spacing (pixdim = {spacing:?})")));
    }
    let vox_offset = B::read_f32(&h[108..112]);
    if !(vox_offset >= NIFTI_HEADER_LEN as f32) {
        return Err(meta(format!("vox_offset {vox_offset} is inside the header")));
    }
    let slope = B::read_f32(&h[112..116]) as f64;
    let inter = B::read_f32(&h[116..120]) as f64;
    let magic = &h[344..348];
    if magic != b"n+1\0" {
        return Err(meta(format!("unsupported magic {:?} (single-file NIfTI-1 expected)", String::from_utf8_lossy(magic))));
    }
    Ok(NiftiHeader { dims, spacing, datatype, vox_offset: vox_offset as usize, slope, inter })
}

fn decode_values<B: ByteOrder>(bytes: &[u8], datatype: i16, n: usize) -> Result<Vec<f64>> {
    let width = match datatype {
        2 | 256 => 1,
        4 | 512 => 2,
        8 | 16 | 768 => 4,
        64 => 8,
        other => return Err(CoreError::Metadata(format!("unsupported NIfTI datatype {other}"))),
    };
    if bytes.len() < n * width {
        return Err(CoreError::Metadata(format!("truncated data: {} bytes for {n} voxels", bytes.len())));
    }
    let chunks = bytes[..n * width].chunks_exact(width);
    Ok(match datatype {
        2 => chunks.map(|c| c[0] as f64).collect(),
        256 => chunks.map(|c| c[0] as i8 as f64).collect(),
        4 => chunks.map(|c| B::read_i16(c) as f64).collect(),
        512 => chunks.map(|c| B::read_u16(c) as f64).collect(),
        8 => chunks.map(|c| B::read_i32(c) as f64).collect(),
        768 => chunks.map(|c| B::read_u32(c) as f64).collect(),
        16 => chunks.map(|c| B::read_f32(c) as f64).collect(),
        _ => chunks.map(B::read_f64).collect(),
    })
}

/// Replaces the f32 pixdim spacing with the exact value from a comment
/// extension written by `encode_nifti`, when present and consistent.
fn exact_spacing<B: ByteOrder>(bytes: &[u8], mut hd: NiftiHeader) -> NiftiHeader {
    if bytes.get(348) != Some(&1) {
        return hd;
    }
    let mut at = NIFTI_VOX_OFFSET;
    while at + 8 <= hd.vox_offset.min(bytes.len()) {
        let esize = B::read_i32(&bytes[at..at + 4]);
        let ecode = B::read_i32(&bytes[at + 4..at + 8]);
        if esize < 16 || at + esize as usize > bytes.len() {
            break;
        }
        let body = &bytes[at + 8..at + esize as usize];
        if ecode == NIFTI_ECODE_COMMENT {
            let end = body.iter().position(|&b| b == 0).unwrap_or(body.len());
            let text = std::str::from_utf8(&body[..end]).unwrap_or("");
            if let Some(list) = text.strip_prefix("fuseg3d-spacing:") {
                let parsed: Vec<f64> = list.split(',').filter_map(|t| t.parse().ok()).collect();
                if parsed.len() == 3 && parsed.iter().zip(&hd.spacing).all(|(e, s)| (*e as f32) as f64 == *s) {
                    hd.spacing.copy_from_slice(&parsed);
                }
            }
        }
        at += esize as usize;
    }
    hd
}

/// Decodes a whole uncompressed NIfTI-1 file into volume order.
fn decode_nifti(bytes: &[u8]) -> Result<(Vec<f64>, [usize; 3], [f64; 3])> {
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(CoreError::Metadata(format!("file too short for a NIfTI header ({} bytes)", bytes.len())));
    }
    let h = &bytes[..NIFTI_HEADER_LEN];
    let little = LittleEndian::read_i32(&h[0..4]) == NIFTI_HEADER_LEN as i32;
    let big = BigEndian::read_i32(&h[0..4]) == NIFTI_HEADER_LEN as i32;
    let (header, values) = if little {
        let hd = parse_header::<LittleEndian>(h)?;
        let n = hd.dims.iter().product();
        let body = bytes.get(hd.vox_offset..).unwrap_or(&[]);
        let vals = decode_values::<LittleEndian>(body, hd.datatype, n)?;
        (exact_spacing::<LittleEndian>(bytes, hd), vals)
    } else if big {
        let hd = parse_header::<BigEndian>(h)?;
        let n = hd.dims.iter().product();
        let body = bytes.get(hd.vox_offset..).unwrap_or(&[]);
        let vals = decode_values::<BigEndian>(body, hd.datatype, n)?;
        (exact_spacing::<BigEndian>(bytes, hd), vals)
    } else {
        return Err(CoreError::Metadata("sizeof_hdr is not 348; not a NIfTI-1 file".into()));
    };
    let scale = header.slope != 0.0 && header.slope.is_finite() && !(header.slope == 1.0 && header.inter == 0.0);
    let [nh, nw, nd] = header.dims;
    let mut data = vec![0.0; nh * nw * nd];
    let mut src = 0;
    for d in 0..nd {
        for w in 0..nw {
            for hh in 0..nh {
                let x = values[src];
                data[(hh * nw + w) * nd + d] = if scale { x * header.slope + header.inter } else { x };
                src += 1;
            }
        }
    }
    Ok((data, header.dims, header.spacing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_and_sidecars() {
        assert_eq!(sidecar_path(Path::new("/a/b/ct.nii.gz")), PathBuf::from("/a/b/ct.json"));
        assert_eq!(sidecar_path(Path::new("pet.nii")), PathBuf::from("pet.json"));
        assert!(format_of(Path::new("x.png")).is_err());
    }

    #[test]
    fn decodes_foreign_int16_with_scaling() {
        // A minimal big-endian int16 file as another tool might write it.
        let mut h = vec![0u8; 352];
        BigEndian::write_i32(&mut h[0..4], 348);
        for (i, d) in [3i16, 2, 1, 1].iter().enumerate() {
            BigEndian::write_i16(&mut h[40 + 2 * i..], *d);
        }
        BigEndian::write_i16(&mut h[70..72], 4);
        for (i, p) in [1.0f32, 0.5, 0.5, 2.0].iter().enumerate() {
            BigEndian::write_f32(&mut h[76 + 4 * i..], *p);
        }
        BigEndian::write_f32(&mut h[108..112], 352.0);
        BigEndian::write_f32(&mut h[112..116], 2.0);
        BigEndian::write_f32(&mut h[116..120], -1.0);
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&7i16.to_be_bytes());
        h.extend_from_slice(&(-3i16).to_be_bytes());
        let (data, dims, sp) = decode_nifti(&h).unwrap();
        assert_eq!(dims, [2, 1, 1]);
        assert_eq!(sp, [0.5, 0.5, 2.0]);
        assert_eq!(data, vec![13.0, -7.0]);
    }
}
