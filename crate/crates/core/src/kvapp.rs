//! Sharded key-value store driven by the replica's deliver callback.
//!
//! Keys are `u64` values carried as 8 big-endian bytes and assigned to shards
//! with the proposer's [`KeySpace`]. Each shard owns a table and, when
//! file-backed, its own directory holding a write-ahead log.
//!
//! Log record: `len: u32 | crc32(payload): u32 | payload`, big-endian, where
//! the payload is the encoded PUT command. Replay stops at the first short or
//! corrupt record and truncates the file there.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proposer::KeySpace;
use crate::replica::{DeliveredCommand, ShardApp};
use crate::wire::PartitionId;

pub const WAL_FILE: &str = "wal.log";
const RECORD_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("malformed command: {0}")]
    Decode(&'static str),
    #[error("key {key} belongs to shard {owner}, not {pid}")]
    WrongShard {
        key: u64,
        owner: PartitionId,
        pid: PartitionId,
    },
    #[error("key {0} outside the key space")]
    KeyOutOfRange(u64),
    #[error("shard storage: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum KvOp {
    Put = 1,
    Get = 2,
}

/// `op: u8 | key_len: u16 | key | val_len: u16 | val | req_id: u64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KvCommand {
    pub op: KvOp,
    pub key: Bytes,
    /// Present for PUT, absent for GET.
    pub value: Option<Bytes>,
    pub request_id: u64,
}

impl KvCommand {
    pub fn put(key: u64, value: impl Into<Bytes>, request_id: u64) -> Self {
        KvCommand {
            op: KvOp::Put,
            key: Bytes::copy_from_slice(&key.to_be_bytes()),
            value: Some(value.into()),
            request_id,
        }
    }

    pub fn get(key: u64, request_id: u64) -> Self {
        KvCommand {
            op: KvOp::Get,
            key: Bytes::copy_from_slice(&key.to_be_bytes()),
            value: None,
            request_id,
        }
    }

    pub fn encoded_len(&self) -> usize {
        1 + 2 + self.key.len() + 2 + self.value.as_ref().map_or(0, |v| v.len()) + 8
    }

    pub fn encode_into(&self, out: &mut impl BufMut) {
        let value = self.value.as_deref().unwrap_or_default();
        out.put_u8(self.op as u8);
        out.put_u16(self.key.len() as u16);
        out.put_slice(&self.key);
        out.put_u16(value.len() as u16);
        out.put_slice(value);
        out.put_u64(self.request_id);
    }

    pub fn encode(&self) -> Bytes {
        let mut b = BytesMut::with_capacity(self.encoded_len());
        self.encode_into(&mut b);
        b.freeze()
    }

    /// Decodes one command from the front of `buf`, advancing it.
    pub fn decode_from(buf: &mut Bytes) -> Result<Self, KvError> {
        if buf.remaining() < 3 {
            return Err(KvError::Decode("truncated header"));
        }
        let op = match buf.get_u8() {
            1 => KvOp::Put,
            2 => KvOp::Get,
            _ => return Err(KvError::Decode("unknown op")),
        };
        let key_len = buf.get_u16() as usize;
        if buf.remaining() < key_len + 2 {
            return Err(KvError::Decode("truncated key"));
        }
        let key = buf.split_to(key_len);
        let val_len = buf.get_u16() as usize;
        if buf.remaining() < val_len + 8 {
            return Err(KvError::Decode("truncated value"));
        }
        let val = buf.split_to(val_len);
        let request_id = buf.get_u64();
        let value = match op {
            KvOp::Put => Some(val),
            KvOp::Get if val.is_empty() => None,
            KvOp::Get => return Err(KvError::Decode("GET carries a value")),
        };
        Ok(KvCommand {
            op,
            key,
            value,
            request_id,
        })
    }

    /// Decodes exactly one command.
    pub fn decode(raw: &[u8]) -> Result<Self, KvError> {
        let mut buf = Bytes::copy_from_slice(raw);
        let cmd = Self::decode_from(&mut buf)?;
        if buf.has_remaining() {
            return Err(KvError::Decode("trailing bytes"));
        }
        Ok(cmd)
    }

    /// Numeric key, when the key is 8 bytes.
    pub fn key_u64(&self) -> Result<u64, KvError> {
        let raw: [u8; 8] = self.key[..]
            .try_into()
            .map_err(|_| KvError::Decode("key is not 8 bytes"))?;
        Ok(u64::from_be_bytes(raw))
    }
}

/// Encodes several commands back to back, the payload of a multi-shard request.
pub fn encode_batch(cmds: &[KvCommand]) -> Bytes {
    let mut b = BytesMut::with_capacity(cmds.iter().map(KvCommand::encoded_len).sum());
    for c in cmds {
        c.encode_into(&mut b);
    }
    b.freeze()
}

pub fn decode_batch(raw: &[u8]) -> Result<Vec<KvCommand>, KvError> {
    let mut buf = Bytes::copy_from_slice(raw);
    let mut out = Vec::new();
    while buf.has_remaining() {
        out.push(KvCommand::decode_from(&mut buf)?);
    }
    if out.is_empty() {
        return Err(KvError::Decode("empty batch"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KvResponse {
    Ack,
    Found(Bytes),
    NotFound,
    Error,
}

impl KvResponse {
    const ACK: u8 = 0;
    const FOUND: u8 = 1;
    const NOT_FOUND: u8 = 2;
    const ERROR: u8 = 0xFF;

    pub fn encode_into(&self, out: &mut BytesMut) {
        match self {
            KvResponse::Ack => out.put_u8(Self::ACK),
            KvResponse::Found(v) => {
                out.put_u8(Self::FOUND);
                out.put_u16(v.len() as u16);
                out.put_slice(v);
            }
            KvResponse::NotFound => out.put_u8(Self::NOT_FOUND),
            KvResponse::Error => out.put_u8(Self::ERROR),
        }
    }

    pub fn encode(&self) -> Bytes {
        let mut b = BytesMut::new();
        self.encode_into(&mut b);
        b.freeze()
    }

    /// Decodes a sequence of responses (one per command in the request).
    pub fn decode_all(raw: &[u8]) -> Option<Vec<KvResponse>> {
        let mut buf = raw;
        let mut out = Vec::new();
        while buf.has_remaining() {
            out.push(match buf.get_u8() {
                Self::ACK => KvResponse::Ack,
                Self::NOT_FOUND => KvResponse::NotFound,
                Self::ERROR => KvResponse::Error,
                Self::FOUND => {
                    if buf.remaining() < 2 {
                        return None;
                    }
                    let n = buf.get_u16() as usize;
                    if buf.remaining() < n {
                        return None;
                    }
                    let v = Bytes::copy_from_slice(&buf[..n]);
                    buf.advance(n);
                    KvResponse::Found(v)
                }
                _ => return None,
            });
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "every")]
pub enum FsyncPolicy {
    PerWrite,
    /// Sync after every n appended records.
    Periodic(u32),
    None,
}

impl Default for FsyncPolicy {
    fn default() -> Self {
        FsyncPolicy::Periodic(64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    InMemory,
    FileBacked,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in-memory" | "memory" => Ok(BackendKind::InMemory),
            "file-backed" | "file" => Ok(BackendKind::FileBacked),
            _ => Err(format!("unknown backend {s:?} (in-memory, file-backed)")),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::InMemory => "in-memory",
            BackendKind::FileBacked => "file-backed",
        })
    }
}

/// Append-only per-shard log.
#[derive(Debug)]
struct Wal {
    path: PathBuf,
    file: File,
    fsync: FsyncPolicy,
    unsynced: u32,
}

impl Wal {
    fn append(&mut self, payload: &[u8]) -> io::Result<usize> {
        let mut rec = Vec::with_capacity(RECORD_HEADER + payload.len());
        rec.put_u32(payload.len() as u32);
        rec.put_u32(crc32fast::hash(payload));
        rec.put_slice(payload);
        self.file.write_all(&rec)?;
        self.unsynced += 1;
        let sync = match self.fsync {
            FsyncPolicy::PerWrite => true,
            FsyncPolicy::Periodic(n) => self.unsynced >= n.max(1),
            FsyncPolicy::None => false,
        };
        if sync {
            self.file.sync_data()?;
            self.unsynced = 0;
        }
        Ok(rec.len())
    }
}

/// Reads every intact record of a log; returns the payloads and the byte
/// length of the valid prefix.
pub fn read_wal(path: &Path) -> io::Result<(Vec<Bytes>, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut valid = 0u64;
    loop {
        let mut header = [0u8; RECORD_HEADER];
        if read_full(&mut r, &mut header)? < RECORD_HEADER {
            break;
        }
        let mut h = &header[..];
        let len = h.get_u32() as usize;
        let crc = h.get_u32();
        let mut payload = vec![0u8; len];
        if read_full(&mut r, &mut payload)? < len || crc32fast::hash(&payload) != crc {
            break;
        }
        valid += (RECORD_HEADER + len) as u64;
        records.push(Bytes::from(payload));
    }
    Ok((records, valid))
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

/// Directory of shard `pid` under `root`.
pub fn shard_dir(root: &Path, pid: PartitionId) -> PathBuf {
    root.join(format!("shard-{pid}"))
}

/// One application shard.
#[derive(Debug)]
pub struct ShardStore {
    pid: PartitionId,
    keys: KeySpace,
    table: HashMap<Bytes, Bytes>,
    wal: Option<Wal>,
    bytes_written: u64,
}

impl ShardStore {
    pub fn in_memory(pid: PartitionId, keys: KeySpace) -> Self {
        ShardStore {
            pid,
            keys,
            table: HashMap::new(),
            wal: None,
            bytes_written: 0,
        }
    }

    /// Opens (or creates) the shard's directory under `root` and replays
    /// its log into the table.
    pub fn file_backed(
        pid: PartitionId,
        keys: KeySpace,
        root: &Path,
        fsync: FsyncPolicy,
    ) -> Result<Self, KvError> {
        let dir = shard_dir(root, pid);
        fs::create_dir_all(&dir)?;
        let path = dir.join(WAL_FILE);
        let mut table = HashMap::new();
        if path.exists() {
            let (records, valid) = read_wal(&path)?;
            for r in records {
                let cmd = KvCommand::decode(&r)?;
                if let Some(v) = cmd.value {
                    table.insert(cmd.key, v);
                }
            }
            // Drop a torn tail so new records follow the last good one.
            OpenOptions::new().write(true).open(&path)?.set_len(valid)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ShardStore {
            pid,
            keys,
            table,
            wal: Some(Wal {
                path,
                file,
                fsync,
                unsynced: 0,
            }),
            bytes_written: 0,
        })
    }

    pub fn open(
        kind: BackendKind,
        pid: PartitionId,
        keys: KeySpace,
        root: Option<&Path>,
        fsync: FsyncPolicy,
    ) -> Result<Self, KvError> {
        match (kind, root) {
            (BackendKind::InMemory, _) => Ok(Self::in_memory(pid, keys)),
            (BackendKind::FileBacked, Some(root)) => Self::file_backed(pid, keys, root, fsync),
            (BackendKind::FileBacked, None) => Err(KvError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                "file-backed store needs a directory",
            ))),
        }
    }

    pub fn pid(&self) -> PartitionId {
        self.pid
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn table(&self) -> &HashMap<Bytes, Bytes> {
        &self.table
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.wal.as_ref().map(|w| w.path.as_path())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        if let Some(w) = &mut self.wal {
            w.file.sync_data()?;
            w.unsynced = 0;
        }
        Ok(())
    }

    fn owner(&self, cmd: &KvCommand) -> Result<PartitionId, KvError> {
        let key = cmd.key_u64()?;
        self.keys
            .map_key(key)
            .map_err(|_| KvError::KeyOutOfRange(key))
    }

    /// Applies one decoded command. Only I/O failures are errors; a key
    /// owned by another shard is rejected before any effect.
    pub fn apply_command(&mut self, cmd: &KvCommand) -> Result<KvResponse, KvError> {
        let owner = self.owner(cmd)?;
        if owner != self.pid {
            return Err(KvError::WrongShard {
                key: cmd.key_u64()?,
                owner,
                pid: self.pid,
            });
        }
        match cmd.op {
            KvOp::Put => {
                let value = cmd.value.clone().unwrap_or_default();
                if let Some(w) = &mut self.wal {
                    self.bytes_written += w.append(&cmd.encode())? as u64;
                }
                self.table.insert(cmd.key.clone(), value);
                Ok(KvResponse::Ack)
            }
            KvOp::Get => Ok(self
                .table
                .get(&cmd.key)
                .map_or(KvResponse::NotFound, |v| KvResponse::Found(v.clone()))),
        }
    }

    /// Applies an encoded command, mapping malformed input to an error
    /// response. I/O failures are returned.
    pub fn apply(&mut self, raw: &[u8]) -> Result<Bytes, io::Error> {
        let resp = match KvCommand::decode(raw).and_then(|c| self.apply_command(&c)) {
            Ok(r) => r,
            Err(KvError::Io(e)) => return Err(e),
            Err(_) => KvResponse::Error,
        };
        Ok(resp.encode())
    }
}

impl ShardApp for ShardStore {
    fn execute(&mut self, cmd: &DeliveredCommand) -> Bytes {
        match self.apply(&cmd.value) {
            Ok(r) => r,
            Err(e) => panic!("shard {} storage failed: {e}", self.pid),
        }
    }

    /// Applies each command of the batch on the shard that owns its key.
    /// The response concatenates one reply per command.
    fn execute_multi(shards: &mut [(PartitionId, Self)], cmd: &DeliveredCommand) -> Bytes {
        let mut out = BytesMut::new();
        let Ok(batch) = decode_batch(&cmd.value) else {
            return KvResponse::Error.encode();
        };
        for c in &batch {
            let owner = shards.first().and_then(|(_, s)| s.owner(c).ok());
            let target = owner.and_then(|o| shards.iter_mut().find(|(p, _)| *p == o));
            let resp = match target {
                Some((_, store)) => match store.apply_command(c) {
                    Ok(r) => r,
                    Err(KvError::Io(e)) => panic!("shard {} storage failed: {e}", store.pid),
                    Err(_) => KvResponse::Error,
                },
                None => KvResponse::Error,
            };
            resp.encode_into(&mut out);
        }
        out.freeze()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ks(p: u16) -> KeySpace {
        KeySpace::new(p, 1 << 20).unwrap()
    }

    fn delivered(value: Bytes) -> DeliveredCommand {
        DeliveredCommand {
            pid: 0,
            inst: 0,
            value,
            request: None,
            multi_shard: None,
            noop: false,
        }
    }

    #[test]
    fn command_layout() {
        let c = KvCommand::put(0x0102, &b"vv"[..], 7);
        let raw = c.encode();
        assert_eq!(
            &raw[..],
            &[1, 0, 8, 0, 0, 0, 0, 0, 0, 1, 2, 0, 2, b'v', b'v', 0, 0, 0, 0, 0, 0, 0, 7]
        );
        assert_eq!(KvCommand::decode(&raw).unwrap(), c);
        let g = KvCommand::get(5, 9);
        assert_eq!(KvCommand::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(KvCommand::decode(b"").is_err());
        assert!(KvCommand::decode(&[9, 0, 0, 0, 0]).is_err());
        let mut raw = KvCommand::get(1, 1).encode().to_vec();
        raw.push(0);
        assert!(KvCommand::decode(&raw).is_err());
        // GET with a value is ambiguous.
        let bad = KvCommand {
            op: KvOp::Get,
            key: Bytes::from_static(&[0; 8]),
            value: Some(Bytes::from_static(b"x")),
            request_id: 0,
        };
        assert!(KvCommand::decode(&bad.encode()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let n = rng.random_range(0..40);
            let raw: Vec<u8> = (0..n).map(|_| rng.random()).collect();
            let _ = KvCommand::decode(&raw);
            let _ = decode_batch(&raw);
        }
    }

    #[test]
    fn read_your_write() {
        let mut s = ShardStore::in_memory(0, ks(1));
        let put = KvCommand::put(42, &b"hello"[..], 1).encode();
        assert_eq!(s.execute(&delivered(put)), KvResponse::Ack.encode());
        let get = KvCommand::get(42, 2).encode();
        assert_eq!(
            KvResponse::decode_all(&s.execute(&delivered(get))).unwrap(),
            vec![KvResponse::Found(Bytes::from_static(b"hello"))]
        );
    }

    #[test]
    fn absent_key_not_found() {
        let mut s = ShardStore::in_memory(0, ks(1));
        let r = s.apply(&KvCommand::get(3, 1).encode()).unwrap();
        assert_eq!(
            KvResponse::decode_all(&r).unwrap(),
            vec![KvResponse::NotFound]
        );
    }

    #[test]
    fn malformed_payload_gets_error_response() {
        let mut s = ShardStore::in_memory(0, ks(1));
        assert_eq!(s.apply(b"\x07junk").unwrap(), KvResponse::Error.encode());
        assert!(s.is_empty());
    }

    #[test]
    fn foreign_key_rejected() {
        let keys = ks(4);
        let mut s = ShardStore::in_memory(0, keys);
        let key = (1 << 20) - 1;
        assert_eq!(keys.map_key(key).unwrap(), 3);
        let r = s
            .apply(&KvCommand::put(key, &b"x"[..], 1).encode())
            .unwrap();
        assert_eq!(r, KvResponse::Error.encode());
        assert!(s.is_empty());
    }

    #[test]
    fn replay_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cmds: Vec<Bytes> = (0..2000)
            .map(|i| {
                let key = rng.random_range(0..64u64);
                if rng.random_bool(0.7) {
                    KvCommand::put(key, Bytes::from(i.to_string()), i).encode()
                } else {
                    KvCommand::get(key, i).encode()
                }
            })
            .collect();
        let run = || {
            let mut s = ShardStore::in_memory(0, ks(1));
            let responses: Vec<Bytes> = cmds.iter().map(|c| s.apply(c).unwrap()).collect();
            (s.table().clone(), responses)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn in_memory_writes_nothing() {
        let mut s = ShardStore::in_memory(0, ks(1));
        for k in 0..100_000u64 {
            s.apply(&KvCommand::put(k, &b"v"[..], k).encode()).unwrap();
        }
        assert_eq!(s.len(), 100_000);
        assert_eq!(s.bytes_written(), 0);
        assert!(s.log_path().is_none());
    }

    #[test]
    fn file_backed_shards_are_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let keys = KeySpace::new(4, 1 << 32).unwrap();
        let mut shards: Vec<ShardStore> = (0..4)
            .map(|p| ShardStore::file_backed(p, keys, dir.path(), FsyncPolicy::None).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100_000u64 {
            let key = rng.random_range(0..1u64 << 32);
            let pid = keys.map_key(key).unwrap() as usize;
            let r = shards[pid]
                .apply(&KvCommand::put(key, &b"v"[..], i).encode())
                .unwrap();
            assert_eq!(r, KvResponse::Ack.encode());
        }
        let mut total = 0;
        for s in &mut shards {
            s.sync().unwrap();
            let path = s.log_path().unwrap().to_path_buf();
            assert_eq!(path, shard_dir(dir.path(), s.pid()).join(WAL_FILE));
            let (records, _) = read_wal(&path).unwrap();
            for r in &records {
                let key = KvCommand::decode(r).unwrap().key_u64().unwrap();
                assert_eq!(keys.map_key(key).unwrap(), s.pid());
            }
            total += records.len();
        }
        assert_eq!(total, 100_000);
    }

    #[test]
    fn crash_restart_replays_log() {
        let dir = tempfile::tempdir().unwrap();
        let keys = ks(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let before = {
            let mut s =
                ShardStore::file_backed(0, keys, dir.path(), FsyncPolicy::Periodic(16)).unwrap();
            for i in 0..5000u64 {
                let key = rng.random_range(0..500u64);
                s.apply(&KvCommand::put(key, Bytes::from(i.to_be_bytes().to_vec()), i).encode())
                    .unwrap();
            }
            s.table().clone()
            // Dropped without a final sync.
        };
        let after = ShardStore::file_backed(0, keys, dir.path(), FsyncPolicy::default()).unwrap();
        assert_eq!(after.table(), &before);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let keys = ks(1);
        let path = {
            let mut s =
                ShardStore::file_backed(0, keys, dir.path(), FsyncPolicy::PerWrite).unwrap();
            for k in 0..10u64 {
                s.apply(&KvCommand::put(k, &b"v"[..], k).encode()).unwrap();
            }
            s.log_path().unwrap().to_path_buf()
        };
        let full = fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 40, 1, 2]).unwrap();
        drop(f);
        let mut s = ShardStore::file_backed(0, keys, dir.path(), FsyncPolicy::PerWrite).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(fs::metadata(&path).unwrap().len(), full);
        s.apply(&KvCommand::put(99, &b"w"[..], 99).encode())
            .unwrap();
        drop(s);
        let s = ShardStore::file_backed(0, keys, dir.path(), FsyncPolicy::PerWrite).unwrap();
        assert_eq!(s.len(), 11);
    }

    #[test]
    fn multi_shard_batch_applies_per_owner() {
        let keys = KeySpace::new(2, 100).unwrap();
        let mut shards = vec![
            (0, ShardStore::in_memory(0, keys)),
            (1, ShardStore::in_memory(1, keys)),
        ];
        let batch = encode_batch(&[
            KvCommand::put(10, &b"a"[..], 1),
            KvCommand::put(60, &b"b"[..], 1),
            KvCommand::get(10, 1),
        ]);
        let r = ShardStore::execute_multi(&mut shards, &delivered(batch));
        assert_eq!(
            KvResponse::decode_all(&r).unwrap(),
            vec![
                KvResponse::Ack,
                KvResponse::Ack,
                KvResponse::Found(Bytes::from_static(b"a"))
            ]
        );
        assert_eq!(shards[0].1.len(), 1);
        assert_eq!(shards[1].1.len(), 1);
    }
}
