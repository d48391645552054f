//! Kill-and-recover over random mutation sequences against the on-disk journal.

use std::fs::OpenOptions;
use std::io::Write;

use heteroglossia_core::engine::{Engine, EventRecord, EventSink, MemorySink, NullSink, StorageError};
use heteroglossia_core::{ManualClock, Timestamp};
use heteroglossia_server::journal::{Journal, JournalSink, LOG_FILE};
use heteroglossia_server::{ClockKind, Config, Service};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use super::checks::mutations::random_session;
use super::Check;

/// Writes to the journal and keeps a copy of every record from genesis, so a
/// full-log replay can be compared with the compacted snapshot+log one.
struct Tee(JournalSink, MemorySink);

impl EventSink for Tee {
    fn append(&mut self, record: &EventRecord) -> Result<(), StorageError> {
        self.0.append(record)?;
        self.1.append(record)
    }
}

fn config(dir: &std::path::Path) -> Config {
    let mut cfg = Config::new("durability-key", dir);
    cfg.clock = ClockKind::Manual;
    cfg.fsync = false;
    cfg
}

/// For each seed: run a random session on a journal-backed engine, taking
/// snapshots at random points, then drop the process state without any
/// shutdown step and boot a fresh service from the directory. Some runs also
/// leave a torn half-record at the end of the log, as a crash mid-write would.
pub fn check_durability(sequences: u64, steps: usize) -> Check {
    let mut snapshots = 0;
    let mut torn = 0;
    let mut events = 0u64;
    for seed in 0..sequences {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0xD0_0000 + seed);
        let (journal, _) = Journal::open(dir.path(), false).map_err(|e| e.to_string())?;
        let journal = JournalSink::new(journal);
        let full = MemorySink::default();
        let clock = Arc::new(ManualClock::new(Timestamp::from_millis(1_600_000_000_000)));
        let mut engine = Engine::new(clock.clone(), Box::new(Tee(journal.clone(), full.clone())));

        let rounds = rng.random_range(1..=4);
        for round in 0..rounds {
            random_session(&mut engine, &clock, &mut rng, steps / rounds);
            if round + 1 < rounds || rng.random_bool(0.3) {
                journal
                    .snapshot(engine.state(), engine.seq(), engine.now())
                    .map_err(|e| format!("seed {seed}: snapshot: {e}"))?;
                snapshots += 1;
            }
        }
        let before = engine.state().clone();
        let seq = engine.seq();
        events += seq;
        drop(engine);
        drop(journal);

        if rng.random_bool(0.25) {
            let mut f = OpenOptions::new()
                .append(true)
                .open(dir.path().join(LOG_FILE))
                .map_err(|e| e.to_string())?;
            f.write_all(br#"{"seq":999999,"at":"2020-01-01T00:00:00.0"#).map_err(|e| e.to_string())?;
            torn += 1;
        }

        let service = Service::open(&config(dir.path())).map_err(|e| format!("seed {seed}: recovery failed: {e}"))?;
        let recovered = service.engine();
        let recovered = recovered.read();
        if recovered.state() != &before || recovered.seq() != seq {
            return Err(format!("seed {seed}: recovered state differs from the state before the kill"));
        }

        let mut genesis = Engine::new(clock.clone(), Box::new(NullSink));
        genesis
            .replay(full.records())
            .map_err(|e| format!("seed {seed}: full replay: {e}"))?;
        if genesis.state() != recovered.state() {
            return Err(format!("seed {seed}: snapshot+log replay differs from full-log replay"));
        }
    }
    Ok(format!(
        "{sequences} sequences, {events} events, {snapshots} snapshots, {torn} torn tails; recovered state deep-equal"
    ))
}
