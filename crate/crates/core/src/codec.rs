//! `.hdpv` binary container and the JSON export.
//!
//! Binary layout (integers little-endian, reals IEEE-754 binary64, `varint`
//! = unsigned LEB128):
//!
//! ```text
//! "HDPV"                      4 bytes magic
//! version                     u16 (currently 1)
//! kind                        u8  (0 = bisection, 1 = identity)
//! schema                      varint length + UTF-8 JSON
//! schema fingerprint          u64 (first 8 bytes of SHA-256 of the schema JSON)
//! params                      7 × f64: ε_r, ε_p, θ, κ, ε_cut, λ, δ
//! meta flags                  u8  (bit 0: seed present, bit 1: timestamp present)
//! seed                        u64, if flagged
//! built_at                    u64, if flagged
//! engine version              varint length + UTF-8
//! m                           varint block count
//! m block records             2d varints (start, end per axis), f64 noisy sum, varint depth
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::params::MechanismParams;
use crate::range::IndexRange;
use crate::schema::Schema;
use crate::view::{BuildMeta, PView, ViewBlock, ViewKind};

pub const MAGIC: &[u8; 4] = b"HDPV";
pub const FORMAT_VERSION: u16 = 1;

pub fn serialize(view: &PView) -> Vec<u8> {
    let d = view.schema.dims();
    let mut out = Vec::with_capacity(256 + view.blocks.len() * (2 * d + 10));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match view.kind {
        ViewKind::Bisection => 0,
        ViewKind::Identity => 1,
    });
    let schema_json = view.schema.to_json();
    put_bytes(&mut out, schema_json.as_bytes());
    out.extend_from_slice(&view.schema.fingerprint().to_le_bytes());
    let p = &view.params;
    for x in [p.epsilon_r, p.epsilon_p, p.theta, p.kappa, p.epsilon_cut, p.lambda, p.delta] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let flags = u8::from(view.meta.seed.is_some()) | (u8::from(view.meta.built_at.is_some()) << 1);
    out.push(flags);
    if let Some(seed) = view.meta.seed {
        out.extend_from_slice(&seed.to_le_bytes());
    }
    if let Some(ts) = view.meta.built_at {
        out.extend_from_slice(&ts.to_le_bytes());
    }
    put_bytes(&mut out, view.meta.engine_version.as_bytes());
    put_varint(&mut out, view.blocks.len() as u64);
    for b in &view.blocks {
        for r in &b.ranges {
            put_varint(&mut out, u64::from(r.start));
            put_varint(&mut out, u64::from(r.end));
        }
        out.extend_from_slice(&b.noisy_sum.to_le_bytes());
        put_varint(&mut out, u64::from(b.depth));
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<PView> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Malformed("missing HDPV magic".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let kind = match r.byte()? {
        0 => ViewKind::Bisection,
        1 => ViewKind::Identity,
        k => return Err(Error::Malformed(format!("unknown view kind {k}"))),
    };
    let schema_json = r.string()?;
    let expected = u64::from_le_bytes(r.array()?);
    let schema = Schema::from_json(&schema_json)
        .map_err(|e| Error::Malformed(format!("embedded schema: {e}")))?;
    let actual = schema.fingerprint();
    if actual != expected {
        return Err(Error::SchemaHashMismatch { expected, actual });
    }
    let mut p = [0f64; 7];
    for x in &mut p {
        *x = r.f64()?;
    }
    let params = MechanismParams {
        epsilon_r: p[0],
        epsilon_p: p[1],
        theta: p[2],
        kappa: p[3],
        epsilon_cut: p[4],
        lambda: p[5],
        delta: p[6],
    };
    let flags = r.byte()?;
    if flags & !0b11 != 0 {
        return Err(Error::Malformed(format!("unknown meta flags {flags:#04x}")));
    }
    let seed = (flags & 1 != 0).then(|| r.u64()).transpose()?;
    let built_at = (flags & 2 != 0).then(|| r.u64()).transpose()?;
    let engine_version = r.string()?;

    let d = schema.dims();
    let m = r.varint()?;
    // every record takes at least 2d + 9 bytes
    let min_record = 2 * d + 9;
    if m > (r.remaining() / min_record) as u64 {
        return Err(Error::Malformed(format!(
            "block count {m} does not fit in {} remaining bytes",
            r.remaining()
        )));
    }
    let mut blocks = Vec::with_capacity(m as usize);
    for i in 0..m {
        let mut ranges = Vec::with_capacity(d);
        for _ in 0..d {
            let (s, e) = (r.varint_u32()?, r.varint_u32()?);
            ranges.push(
                IndexRange::new(s, e)
                    .ok_or_else(|| Error::Malformed(format!("block {i} has start {s} > end {e}")))?,
            );
        }
        let noisy_sum = r.f64()?;
        let depth = r.varint_u32()?;
        blocks.push(ViewBlock {
            ranges,
            noisy_sum,
            depth,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let view = PView {
        kind,
        schema,
        params,
        meta: BuildMeta {
            seed,
            built_at,
            engine_version,
        },
        blocks,
    };
    view.validate()?;
    Ok(view)
}

#[derive(Serialize, Deserialize)]
struct JsonView {
    version: u16,
    kind: ViewKind,
    schema: Schema,
    params: MechanismParams,
    meta: BuildMeta,
    blocks: Vec<ViewBlock>,
}

/// Debug/UI export: `{"version", "kind", "schema", "params", "meta", "blocks"}`.
pub fn to_json(view: &PView) -> String {
    serde_json::to_string(&JsonView {
        version: FORMAT_VERSION,
        kind: view.kind,
        schema: view.schema.clone(),
        params: view.params,
        meta: view.meta.clone(),
        blocks: view.blocks.clone(),
    })
    .expect("view serialization is infallible")
}

pub fn from_json(text: &str) -> Result<PView> {
    let j: JsonView = serde_json::from_str(text)?;
    if j.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: j.version,
            expected: FORMAT_VERSION,
        });
    }
    let view = PView {
        kind: j.kind,
        schema: Schema::new(j.schema.attributes)?,
        params: j.params,
        meta: j.meta,
        blocks: j.blocks,
    };
    view.validate()?;
    Ok(view)
}

/// Writes JSON when the path ends in `.json`, the binary container otherwise.
pub fn write_view(path: impl AsRef<std::path::Path>, view: &PView) -> Result<()> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        to_json(view).into_bytes()
    } else {
        serialize(view)
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads either format, sniffing the magic.
pub fn read_view(path: impl AsRef<std::path::Path>) -> Result<PView> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        deserialize(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Malformed("neither an HDPV container nor UTF-8 JSON".into()))?;
        from_json(text)
    }
}

fn put_varint(out: &mut Vec<u8>, mut x: u64) {
    while x >= 0x80 {
        out.push((x as u8) | 0x80);
        x >>= 7;
    }
    out.push(x as u8);
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_varint(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Malformed(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut x = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.byte()?;
            x |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(x);
            }
        }
        Err(Error::Malformed(format!("varint overflow at byte {}", self.pos)))
    }

    fn varint_u32(&mut self) -> Result<u32> {
        let x = self.varint()?;
        u32::try_from(x).map_err(|_| Error::Malformed(format!("index {x} exceeds 32 bits")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.varint()?;
        if n > self.remaining() as u64 {
            return Err(Error::Malformed(format!("string length {n} exceeds the input")));
        }
        let bytes = self.take(n as usize)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::RandomStream;
    use crate::partition::params::{derive_params, Hyperparams};
    use proptest::prelude::*;

    fn random_view(m: usize, seed: u64) -> PView {
        // m slabs along axis 0 of a (m × 7) domain
        let schema = Schema::from_domains(&[m as u32, 7]).unwrap();
        let mut rng = RandomStream::new(seed);
        let blocks = (0..m as u32)
            .map(|i| ViewBlock {
                ranges: vec![IndexRange::new(i, i).unwrap(), IndexRange::new(0, 6).unwrap()],
                noisy_sum: (rng.uniform() - 0.5) * 1e4,
                depth: rng.below(40) as u32,
            })
            .collect();
        PView {
            kind: ViewKind::Bisection,
            params: derive_params(&Hyperparams::default(), schema.total_domain_log2()).unwrap(),
            schema,
            meta: BuildMeta::new(Some(seed)),
            blocks,
        }
    }

    #[test]
    fn varint_edges() {
        for x in [0u64, 1, 127, 128, 300, u64::from(u32::MAX), u64::MAX] {
            let mut out = Vec::new();
            put_varint(&mut out, x);
            let mut r = Reader { buf: &out, pos: 0 };
            assert_eq!(r.varint().unwrap(), x);
            assert_eq!(r.remaining(), 0);
        }
    }

    #[test]
    fn header_is_bit_exact() {
        let v = random_view(3, 1);
        let bytes = serialize(&v);
        assert_eq!(&bytes[..4], b"HDPV");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
    }

    #[test]
    fn size_grows_linearly_in_block_count() {
        for seed in 0..5 {
            let small = serialize(&random_view(1000, seed)).len() as f64;
            let large = serialize(&random_view(2000, seed)).len() as f64;
            let ratio = large / small;
            assert!((1.8..=2.2).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn corrupted_inputs_are_errors() {
        let v = random_view(5, 2);
        let bytes = serialize(&v);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(deserialize(&bad_magic), Err(Error::Malformed(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(deserialize(&bad_version), Err(Error::VersionMismatch { found: 9, .. })));

        // flip a byte of the schema fingerprint
        let schema_len = v.schema.to_json().len();
        let mut prefix = Vec::new();
        put_varint(&mut prefix, schema_len as u64);
        let fp_at = 7 + prefix.len() + schema_len;
        let mut bad_hash = bytes.clone();
        bad_hash[fp_at] ^= 0xff;
        assert!(matches!(deserialize(&bad_hash), Err(Error::SchemaHashMismatch { .. })));

        // block count is the byte right before the first block record
        let first_record = bytes.len() - 5 * (2 * 2 + 8 + 1);
        let mut bad_count = bytes.clone();
        bad_count[first_record - 1] = 0x7f;
        assert!(matches!(deserialize(&bad_count), Err(Error::Malformed(_))));

        assert!(deserialize(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(deserialize(&trailing).is_err());
        assert!(deserialize(&[]).is_err());
    }

    #[test]
    fn json_round_trip_and_shape() {
        let v = random_view(4, 3);
        let text = to_json(&v);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["version", "schema", "params", "blocks"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert!(value["blocks"][0]["ranges"][0].is_array());
        assert_eq!(from_json(&text).unwrap(), v);
    }

    #[test]
    fn file_round_trip_sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let v = random_view(6, 4);
        for name in ["v.hdpv", "v.json"] {
            let path = dir.path().join(name);
            write_view(&path, &v).unwrap();
            assert_eq!(read_view(&path).unwrap(), v);
        }
    }

    proptest! {
        #[test]
        fn binary_round_trip(m in 1usize..60, seed in any::<u64>(), ts in proptest::option::of(any::<u64>())) {
            let mut v = random_view(m, seed);
            v.meta.built_at = ts;
            v.blocks[0].noisy_sum = f64::from_bits(seed >> 12 | 0x3ff0_0000_0000_0000);
            let back = deserialize(&serialize(&v)).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
