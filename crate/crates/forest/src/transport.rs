//! The simulated multi-rank world: a deterministic superstep scheduler over a
//! message-queue transport, with a recordable transcript of every collective.
//!
//! Ranks never touch each other's state directly. A collective operation is a
//! superstep: every rank produces its outgoing messages from its own state,
//! the transport routes them, and every rank consumes its inbox. The serial
//! executor runs ranks round-robin; the threaded executor runs the per-rank
//! closures on OS threads. Both must produce identical results, which holds
//! as long as the closures are deterministic per rank - routing and delivery
//! order are fixed by (sender, send order).

use std::fmt;

/// How per-rank work is dispatched within a superstep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    /// Round-robin in rank order on the calling thread.
    Serial,
    /// One OS thread per rank (scoped), joined before the superstep ends.
    Threads,
}

/// Kind of a recorded collective operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    /// Point-to-point superstep: arbitrary rank-to-rank messages.
    Exchange,
    /// Every rank contributes, every rank receives all contributions.
    Allgather,
    /// Every rank contributes, every rank receives the folded value.
    Allreduce,
}

/// One point-to-point message in the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

/// One collective operation in the transcript.
#[derive(Debug, Clone)]
pub struct CollectiveRecord {
    pub kind: CollectiveKind,
    /// Point-to-point messages routed in this superstep (empty for
    /// allgather/allreduce, which are recorded as single collectives).
    pub messages: Vec<MessageRecord>,
}

/// Recorded history of all cross-rank communication.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    pub records: Vec<CollectiveRecord>,
}

impl Transcript {
    /// Number of recorded collectives of the given kind since `mark`.
    pub fn count_since(&self, mark: usize, kind: CollectiveKind) -> usize {
        self.records[mark..]
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    }

    /// All point-to-point messages since `mark`.
    pub fn messages_since(&self, mark: usize) -> impl Iterator<Item = &MessageRecord> {
        self.records[mark..].iter().flat_map(|r| r.messages.iter())
    }

    /// Current position, for later `count_since`/`messages_since` queries.
    pub fn mark(&self) -> usize {
        self.records.len()
    }
}

/// The rank communicator: rank count, executor choice and transcript.
pub struct World {
    ranks: usize,
    executor: Executor,
    pub transcript: Transcript,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("ranks", &self.ranks)
            .field("executor", &self.executor)
            .field("collectives", &self.transcript.records.len())
            .finish()
    }
}

impl World {
    pub fn new(ranks: usize) -> Self {
        Self::with_executor(ranks, Executor::Serial)
    }

    pub fn with_executor(ranks: usize, executor: Executor) -> Self {
        assert!(ranks > 0, "need at least one rank");
        World {
            ranks,
            executor,
            transcript: Transcript::default(),
        }
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn executor(&self) -> Executor {
        self.executor
    }

    /// Run `f` once per rank against that rank's slot of `states`, serially or
    /// on threads per the executor. Results are returned in rank order.
    pub fn par_ranks<S, R, F>(&self, states: &mut [S], f: F) -> Vec<R>
    where
        S: Send,
        R: Send,
        F: Fn(usize, &mut S) -> R + Sync,
    {
        assert_eq!(states.len(), self.ranks);
        match self.executor {
            Executor::Serial => states
                .iter_mut()
                .enumerate()
                .map(|(p, s)| f(p, s))
                .collect(),
            Executor::Threads => std::thread::scope(|scope| {
                let handles: Vec<_> = states
                    .iter_mut()
                    .enumerate()
                    .map(|(p, s)| {
                        let f = &f;
                        scope.spawn(move || f(p, s))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            }),
        }
    }

    /// Point-to-point superstep. `outgoing[p]` holds rank p's messages as
    /// `(destination, records)`; the result gives each rank its inbox as
    /// `(source, records)`, sorted by source and, per source, in send order.
    /// Empty messages are not routed and not recorded.
    pub fn exchange<T: Clone>(
        &mut self,
        outgoing: Vec<Vec<(usize, Vec<T>)>>,
    ) -> Vec<Vec<(usize, Vec<T>)>> {
        assert_eq!(outgoing.len(), self.ranks);
        let mut record = Vec::new();
        let mut inboxes: Vec<Vec<(usize, Vec<T>)>> =
            (0..self.ranks).map(|_| Vec::new()).collect();
        for (src, msgs) in outgoing.into_iter().enumerate() {
            for (dst, payload) in msgs {
                assert!(dst < self.ranks, "message to rank {dst} out of range");
                assert!(dst != src, "self-messages must be handled rank-locally");
                if payload.is_empty() {
                    continue;
                }
                record.push(MessageRecord {
                    src,
                    dst,
                    bytes: (payload.len() * std::mem::size_of::<T>()) as u64,
                });
                inboxes[dst].push((src, payload));
            }
        }
        // Delivery order: by source rank, then send order (stable).
        for inbox in inboxes.iter_mut() {
            inbox.sort_by_key(|(src, _)| *src);
        }
        self.transcript.records.push(CollectiveRecord {
            kind: CollectiveKind::Exchange,
            messages: record,
        });
        inboxes
    }

    /// Allgather: every rank receives the vector of all contributions.
    pub fn allgather<T: Clone>(&mut self, contributions: Vec<T>) -> Vec<T> {
        assert_eq!(contributions.len(), self.ranks);
        self.transcript.records.push(CollectiveRecord {
            kind: CollectiveKind::Allgather,
            messages: Vec::new(),
        });
        contributions
    }

    /// Allreduce with a binary fold, applied in ascending rank order.
    pub fn allreduce<T, F: Fn(T, T) -> T>(&mut self, contributions: Vec<T>, fold: F) -> T {
        assert_eq!(contributions.len(), self.ranks);
        self.transcript.records.push(CollectiveRecord {
            kind: CollectiveKind::Allreduce,
            messages: Vec::new(),
        });
        let mut it = contributions.into_iter();
        let first = it.next().expect("at least one rank");
        it.fold(first, fold)
    }

    /// Allreduce minimum.
    pub fn allreduce_min<T: Ord>(&mut self, contributions: Vec<T>) -> T {
        self.allreduce(contributions, |a, b| a.min(b))
    }

    /// Allreduce sum of u64.
    pub fn allreduce_sum(&mut self, contributions: Vec<u64>) -> u64 {
        self.allreduce(contributions, |a, b| a + b)
    }
}
