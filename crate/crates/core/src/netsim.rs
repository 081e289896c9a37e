//! Deterministic message-passing simulator.
//!
//! A node only ever sees its own state and the latest message received from
//! each neighbour. The unit of communication is one `n`-vector over one
//! directed edge; a message of length `k n` costs `k` units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Stacked;
use crate::par::{self, Exec};

/// Latest message from each neighbour, aligned with `Graph::neighbors(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMailbox {
    from: Vec<usize>,
    blocks: Vec<Vec<f64>>,
    stamps: Vec<u64>,
}

impl NodeMailbox {
    fn new(neighbors: &[usize], len: usize) -> Self {
        Self {
            from: neighbors.to_vec(),
            blocks: vec![vec![0.0; len]; neighbors.len()],
            stamps: vec![0; neighbors.len()],
        }
    }

    fn slot(&self, j: usize) -> Option<usize> {
        self.from.binary_search(&j).ok()
    }

    pub fn senders(&self) -> &[usize] {
        &self.from
    }

    /// Round or event stamp of the latest message from `j`.
    pub fn stamp(&self, j: usize) -> Option<u64> {
        self.slot(j).map(|s| self.stamps[s])
    }
}

/// Per-node operation counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub vectors_sent: Vec<u64>,
    pub vectors_received: Vec<u64>,
    pub prox_evals: Vec<u64>,
    pub grad_evals: Vec<u64>,
    /// Zero-length control messages (termination notices).
    pub control_sent: Vec<u64>,
    pub rounds: u64,
    pub events: u64,
}

impl CommLedger {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            vectors_sent: vec![0; num_nodes],
            vectors_received: vec![0; num_nodes],
            prox_evals: vec![0; num_nodes],
            grad_evals: vec![0; num_nodes],
            control_sent: vec![0; num_nodes],
            rounds: 0,
            events: 0,
        }
    }

    pub fn total_sent(&self) -> u64 {
        self.vectors_sent.iter().sum()
    }

    pub fn total_received(&self) -> u64 {
        self.vectors_received.iter().sum()
    }

    pub fn max_sent_per_node(&self) -> u64 {
        self.vectors_sent.iter().copied().max().unwrap_or(0)
    }

    pub fn max_prox_per_node(&self) -> u64 {
        self.prox_evals.iter().copied().max().unwrap_or(0)
    }

    pub fn max_grad_per_node(&self) -> u64 {
        self.grad_evals.iter().copied().max().unwrap_or(0)
    }
}

/// What a node may read during a round.
pub struct NodeView<'a> {
    id: usize,
    degree: usize,
    mailbox: &'a NodeMailbox,
}

impl<'a> NodeView<'a> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Latest block received from neighbour `j`.
    pub fn neighbor_block(&self, j: usize) -> Result<&'a [f64]> {
        let slot = self.mailbox.slot(j).ok_or_else(|| {
            Error::Protocol(format!(
                "node {} tried to read from non-neighbour {}",
                self.id + 1,
                j + 1
            ))
        })?;
        Ok(&self.mailbox.blocks[slot])
    }

    /// `(j, block_j)` for every neighbour, in increasing `j`.
    pub fn neighbor_blocks(&self) -> impl Iterator<Item = (usize, &'a [f64])> + 'a {
        let mb: &'a NodeMailbox = self.mailbox;
        mb.from.iter().copied().zip(mb.blocks.iter().map(Vec::as_slice))
    }
}

/// Network state: mailboxes plus the ledger.
#[derive(Debug, Clone)]
pub struct Network<'g> {
    graph: &'g Graph,
    dim: usize,
    mailboxes: Vec<NodeMailbox>,
    ledger: CommLedger,
    clock: u64,
    exec: Exec,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g Graph, dim: usize, exec: Exec) -> Self {
        let mailboxes = (0..graph.num_nodes())
            .map(|i| NodeMailbox::new(graph.neighbors(i), dim))
            .collect();
        Self {
            graph,
            dim,
            mailboxes,
            ledger: CommLedger::new(graph.num_nodes()),
            clock: 0,
            exec,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn mailbox(&self, i: usize) -> &NodeMailbox {
        &self.mailboxes[i]
    }

    pub fn ledger_snapshot(&self) -> CommLedger {
        self.ledger.clone()
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    fn units(&self, len: usize) -> Result<u64> {
        if self.dim == 0 || len % self.dim != 0 || len == 0 {
            return Err(Error::Dimension {
                expected: self.dim,
                got: len,
                context: "message length must be a positive multiple of the block dimension",
            });
        }
        Ok((len / self.dim) as u64)
    }

    /// Node `i` sends `msg` to all of its neighbours.
    pub fn send(&mut self, i: usize, msg: &[f64]) -> Result<()> {
        let units = self.units(msg.len())?;
        self.clock += 1;
        let stamp = self.clock;
        for &j in self.graph.neighbors(i) {
            let mb = &mut self.mailboxes[j];
            let slot = mb.slot(i).expect("adjacency is symmetric");
            mb.blocks[slot].clear();
            mb.blocks[slot].extend_from_slice(msg);
            mb.stamps[slot] = stamp;
            self.ledger.vectors_received[j] += units;
        }
        self.ledger.vectors_sent[i] += units * self.graph.degree(i) as u64;
        Ok(())
    }

    /// Every node sends its block of `blocks` to its neighbours.
    pub fn broadcast(&mut self, blocks: &Stacked) -> Result<()> {
        if blocks.num_blocks() != self.graph.num_nodes() {
            return Err(Error::Dimension {
                expected: self.graph.num_nodes(),
                got: blocks.num_blocks(),
                context: "broadcast blocks",
            });
        }
        for i in 0..self.graph.num_nodes() {
            self.send(i, blocks.block(i))?;
        }
        Ok(())
    }

    /// Places every block of `blocks` in the neighbours' mailboxes without
    /// charging, for state the neighbours already hold.
    pub fn deliver_uncharged(&mut self, blocks: &Stacked) -> Result<()> {
        let before = self.ledger.clone();
        let res = self.broadcast(blocks);
        self.ledger = before;
        res
    }

    /// Evaluates `producer` at every node against the current mailboxes
    /// without sending anything. Results come back in node order.
    pub fn compute<T, F>(&self, producer: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&NodeView<'_>) -> T + Sync + Send,
    {
        let graph = self.graph;
        let mailboxes = &self.mailboxes;
        par::map_indexed(self.exec, graph.num_nodes(), |i| {
            let view = NodeView {
                id: i,
                degree: graph.degree(i),
                mailbox: &mailboxes[i],
            };
            producer(&view)
        })
    }

    /// One synchronous round: all nodes compute from round-start mailboxes,
    /// then every node sends its new block to its neighbours.
    pub fn sync_round<T, F>(&mut self, producer: F) -> Result<(Stacked, Vec<T>)>
    where
        T: Send,
        F: Fn(&NodeView<'_>) -> Result<(Vec<f64>, T)> + Sync + Send,
    {
        let outputs = self.compute(producer);
        let mut blocks = Vec::with_capacity(outputs.len());
        let mut extras = Vec::with_capacity(outputs.len());
        for (i, out) in outputs.into_iter().enumerate() {
            let (block, extra) = out?;
            if block.len() != self.dim {
                return Err(Error::Protocol(format!(
                    "node {} produced a block of length {} (expected {})",
                    i + 1,
                    block.len(),
                    self.dim
                )));
            }
            blocks.push(block);
            extras.push(extra);
        }
        let stacked = Stacked::from_blocks(&blocks)?;
        self.broadcast(&stacked)?;
        self.ledger.rounds += 1;
        Ok((stacked, extras))
    }

    /// Asynchronous activation of node `i`: compute from its mailbox, then
    /// send the result to its neighbours.
    pub fn activate<F>(&mut self, i: usize, producer: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&NodeView<'_>) -> Result<Vec<f64>>,
    {
        let view = NodeView {
            id: i,
            degree: self.graph.degree(i),
            mailbox: &self.mailboxes[i],
        };
        let msg = producer(&view)?;
        self.send(i, &msg)?;
        self.ledger.events += 1;
        Ok(msg)
    }

    /// Accounts for node `i` sending `units` vectors to every neighbour
    /// without touching the mailboxes.
    pub fn charge_send(&mut self, i: usize, units: u64) {
        for &j in self.graph.neighbors(i) {
            self.ledger.vectors_received[j] += units;
        }
        self.ledger.vectors_sent[i] += units * self.graph.degree(i) as u64;
        self.ledger.events += 1;
    }

    pub fn charge_grad(&mut self, i: usize) {
        self.ledger.grad_evals[i] += 1;
    }

    pub fn charge_grad_all(&mut self) {
        self.ledger.grad_evals.iter_mut().for_each(|c| *c += 1);
    }

    pub fn charge_prox(&mut self, i: usize) {
        self.ledger.prox_evals[i] += 1;
    }

    pub fn charge_prox_all(&mut self) {
        self.ledger.prox_evals.iter_mut().for_each(|c| *c += 1);
    }

    /// Termination notice from `i` to each neighbour.
    pub fn charge_control(&mut self, i: usize) {
        self.ledger.control_sent[i] += self.graph.degree(i) as u64;
    }

    /// Charges `units` vectors per neighbour for every node without moving
    /// data (used where a protocol's cost is fixed by convention).
    pub fn charge_broadcast_units(&mut self, units: u64) {
        for i in 0..self.graph.num_nodes() {
            let d = self.graph.degree(i) as u64;
            self.ledger.vectors_sent[i] += units * d;
            self.ledger.vectors_received[i] += units * d;
        }
    }
}

/// Equal-rate exponential clocks: the next node to fire is uniform over
/// the nodes, independently of the past.
#[derive(Debug, Clone)]
pub struct AsyncClock {
    rng: ChaCha8Rng,
    num_nodes: usize,
}

impl AsyncClock {
    pub fn new(seed: u64, num_nodes: usize) -> Self {
        assert!(num_nodes >= 1, "need at least one node");
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            num_nodes,
        }
    }

    pub fn next_node(&mut self) -> usize {
        if self.num_nodes == 1 {
            return 0;
        }
        self.rng.random_range(0..self.num_nodes)
    }
}

impl Iterator for AsyncClock {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.next_node())
    }
}

/// The first `num_events` activations of a seeded schedule.
pub fn async_schedule(seed: u64, num_events: usize, num_nodes: usize) -> Vec<usize> {
    AsyncClock::new(seed, num_nodes).take(num_events).collect()
}
