//! Bounded dedup index mapping message ids to the sequence number they were
//! first assigned, persisted as an append-only journal next to the log.

use super::storage::Storage;
use crate::ids::MessageId;
use lru::LruCache;
use std::io;
use std::num::NonZeroUsize;

pub const DEFAULT_DEDUP_CAPACITY: usize = 65_536;
const JOURNAL_ENTRY: usize = 24;

pub struct DedupIndex {
    cache: LruCache<MessageId, u64>,
    journal: Option<Box<dyn Storage>>,
    journal_entries: u64,
}

impl DedupIndex {
    pub fn new(capacity: usize, journal: Option<Box<dyn Storage>>) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        DedupIndex { cache: LruCache::new(cap), journal, journal_entries: 0 }
    }

    /// Replays the journal; a trailing partial entry is ignored.
    pub fn load(&mut self) -> io::Result<()> {
        let Some(j) = self.journal.as_ref() else { return Ok(()) };
        let len = j.len()?;
        let n = len / JOURNAL_ENTRY as u64;
        let mut buf = vec![0u8; (n as usize) * JOURNAL_ENTRY];
        j.read_at(0, &mut buf)?;
        for chunk in buf.chunks_exact(JOURNAL_ENTRY) {
            let mut id = [0u8; 16];
            id.copy_from_slice(&chunk[..16]);
            let seq = u64::from_le_bytes(chunk[16..24].try_into().unwrap());
            self.cache.put(MessageId(id), seq);
        }
        self.journal_entries = n;
        Ok(())
    }

    pub fn get(&mut self, id: &MessageId) -> Option<u64> {
        self.cache.get(id).copied()
    }

    /// Records an id in memory only (used when rebuilding from records).
    pub fn remember(&mut self, id: MessageId, seq: u64) {
        self.cache.put(id, seq);
    }

    pub fn insert(&mut self, id: MessageId, seq: u64) -> io::Result<()> {
        self.cache.put(id, seq);
        if self.journal.is_none() {
            return Ok(());
        }
        if self.journal_entries >= 2 * self.cache.cap().get() as u64 {
            self.compact()?;
            return Ok(());
        }
        let mut e = [0u8; JOURNAL_ENTRY];
        e[..16].copy_from_slice(&id.0);
        e[16..].copy_from_slice(&seq.to_le_bytes());
        let off = self.journal_entries * JOURNAL_ENTRY as u64;
        let j = self.journal.as_mut().unwrap();
        j.write_at(off, &e)?;
        j.sync()?;
        self.journal_entries += 1;
        Ok(())
    }

    fn compact(&mut self) -> io::Result<()> {
        let mut buf = Vec::with_capacity(self.cache.len() * JOURNAL_ENTRY);
        // oldest first so replay reproduces recency order
        for (id, seq) in self.cache.iter().rev() {
            buf.extend_from_slice(&id.0);
            buf.extend_from_slice(&seq.to_le_bytes());
        }
        let j = self.journal.as_mut().unwrap();
        j.write_at(0, &buf)?;
        j.set_len(buf.len() as u64)?;
        j.sync()?;
        self.journal_entries = self.cache.len() as u64;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logstore::storage::MemStorage;

    #[test]
    fn journal_survives_reload_and_compaction() {
        let mem = MemStorage::new();
        let mut d = DedupIndex::new(4, Some(Box::new(mem.clone())));
        for i in 0..20u64 {
            d.insert(MessageId([i as u8; 16]), i + 1).unwrap();
        }
        let mut again = DedupIndex::new(4, Some(Box::new(mem)));
        again.load().unwrap();
        assert_eq!(again.len(), 4);
        assert_eq!(again.get(&MessageId([19; 16])), Some(20));
        assert_eq!(again.get(&MessageId([16; 16])), Some(17));
        assert_eq!(again.get(&MessageId([15; 16])), None);
    }
}
