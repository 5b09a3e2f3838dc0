//! Binary snapshot format, all integers little-endian:
//!
//! ```text
//! magic "BLMS" | version u16 | kind u8 | dim u32 | count u64
//! count x ( body_len u32 | body )
//! body = insert_seq u64 | key_text str | payload | dim x f64 (IEEE bits)
//! str  = len u32 | utf-8 bytes
//! payload = 0 text:str
//!         | 1 state_digest:str action_item_id:str advantage_v:u8
//!         | 2 state_digest:str value:f64
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{MemoryEntry, MemoryError, Payload, StoreKind, VectorStore};

const MAGIC: &[u8; 4] = b"BLMS";
const VERSION: u16 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MemoryError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| MemoryError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MemoryError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MemoryError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, MemoryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, MemoryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, MemoryError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn str(&mut self) -> Result<String, MemoryError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| MemoryError::Corrupt("invalid utf-8".into()))
    }
}

impl VectorStore {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind().tag());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        let mut body = Vec::new();
        for e in self.entries() {
            body.clear();
            body.extend_from_slice(&e.insert_seq.to_le_bytes());
            put_str(&mut body, &e.key_text);
            match &e.payload {
                Payload::Reflection { text } => {
                    body.push(0);
                    put_str(&mut body, text);
                }
                Payload::ActorExp { state_digest, action_item_id, advantage_v } => {
                    body.push(1);
                    put_str(&mut body, state_digest);
                    put_str(&mut body, action_item_id);
                    body.push(*advantage_v);
                }
                Payload::CriticExp { state_digest, value } => {
                    body.push(2);
                    put_str(&mut body, state_digest);
                    body.extend_from_slice(&value.to_bits().to_le_bytes());
                }
            }
            for x in &e.key_vec {
                body.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            out.extend_from_slice(&(body.len() as u32).to_le_bytes());
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, MemoryError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(MemoryError::Corrupt("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(MemoryError::Corrupt(format!("unsupported version {version}")));
        }
        let kind = StoreKind::from_tag(r.u8()?).ok_or_else(|| MemoryError::Corrupt("unknown store kind".into()))?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(MemoryError::Corrupt("zero dimension".into()));
        }
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let mut b = Reader { buf: r.take(len)?, pos: 0 };
            let insert_seq = b.u64()?;
            let key_text = b.str()?;
            let payload = match b.u8()? {
                0 => Payload::Reflection { text: b.str()? },
                1 => {
                    let state_digest = b.str()?;
                    let action_item_id = b.str()?;
                    let advantage_v = b.u8()?;
                    if advantage_v > 1 {
                        return Err(MemoryError::InvalidAdvantage(advantage_v));
                    }
                    Payload::ActorExp { state_digest, action_item_id, advantage_v }
                }
                2 => Payload::CriticExp { state_digest: b.str()?, value: b.f64()? },
                t => return Err(MemoryError::Corrupt(format!("unknown payload tag {t}"))),
            };
            if payload.kind() != kind {
                return Err(MemoryError::Corrupt("payload kind does not match store kind".into()));
            }
            let key_vec = (0..dim).map(|_| b.f64()).collect::<Result<Vec<_>, _>>()?;
            if b.pos != len {
                return Err(MemoryError::Corrupt("entry length mismatch".into()));
            }
            if entries.last().is_some_and(|p: &MemoryEntry| p.insert_seq >= insert_seq) {
                return Err(MemoryError::Corrupt("insert sequence not increasing".into()));
            }
            entries.push(MemoryEntry { key_text, payload, key_vec, insert_seq });
        }
        if r.pos != buf.len() {
            return Err(MemoryError::Corrupt("trailing bytes".into()));
        }
        Ok(VectorStore::from_parts(kind, dim, entries))
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| MemoryError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let bytes = std::fs::read(path).map_err(|source| MemoryError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{HashingEncoder, Memories, TextEncoder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn populated(seed: u64, n: usize) -> Memories {
        let e = HashingEncoder::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Memories::new(e.dim());
        for k in 0..n {
            let key = format!("user {} saw item {}", rng.random_range(0..5), rng.random_range(0..9));
            m.planner.insert_text(&e, &key, Payload::Reflection { text: format!("note {k} ünïcode") }).unwrap();
            m.actor
                .insert_text(&e, &key, Payload::ActorExp {
                    state_digest: format!("{k:x}"),
                    action_item_id: format!("i{k}"),
                    advantage_v: (k % 2) as u8,
                })
                .unwrap();
            m.critic
                .insert_text(&e, &key, Payload::CriticExp { state_digest: format!("{k:x}"), value: rng.random_range(-1.0..30.0) })
                .unwrap();
        }
        m
    }

    #[test]
    fn snapshot_round_trip_preserves_retrieval() {
        let m = populated(5, 100);
        let dir = tempfile::tempdir().unwrap();
        m.snapshot_dir(dir.path()).unwrap();
        let back = Memories::load_dir(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hashes(), m.content_hashes());
        let e = HashingEncoder::default();
        for q in ["user 1 saw item 3", "user 4 saw item 0", "something else"] {
            let qv = e.embed(q).unwrap();
            for (a, b) in [(&m.planner, &back.planner), (&m.actor, &back.actor), (&m.critic, &back.critic)] {
                let ta: Vec<_> = a.retrieve_topk(&qv, 5).unwrap().iter().map(|h| (h.entry.insert_seq, h.distance.to_bits())).collect();
                let tb: Vec<_> = b.retrieve_topk(&qv, 5).unwrap().iter().map(|h| (h.entry.insert_seq, h.distance.to_bits())).collect();
                assert_eq!(ta, tb);
                let ra: Vec<_> = a.retrieve_threshold(&qv, 0.5).unwrap().iter().map(|h| h.entry.insert_seq).collect();
                let rb: Vec<_> = b.retrieve_threshold(&qv, 0.5).unwrap().iter().map(|h| h.entry.insert_seq).collect();
                assert_eq!(ra, rb);
            }
        }
    }

    #[test]
    fn empty_store_round_trips() {
        let s = VectorStore::new(StoreKind::Critic, 4);
        assert_eq!(VectorStore::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = populated(1, 3);
        let bytes = m.actor.to_bytes();
        assert!(VectorStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(VectorStore::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(VectorStore::from_bytes(&magic).is_err());
        assert!(VectorStore::load(Path::new("/nonexistent/actor.mem")).is_err());
    }
}
