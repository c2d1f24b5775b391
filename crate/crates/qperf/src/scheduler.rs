//! Time and resource accounting: ASAP list scheduling of physical instruction
//! streams under full connectivity, with a globally shared ancilla pool.
//!
//! A [`Machine`] owns the mutable state of one run (qubit records, pool,
//! timeline); separate runs never share state. Each instruction starts at the
//! latest `busy_until` of its operands; ties are broken by program order, so
//! scheduling is deterministic. Classical processing (majority votes,
//! syndrome decoding) takes zero time.

use crate::circuit::{Circuit, GateKind};
use crate::error_model::{apply_decoherence, Fidelity, PhysicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Data,
    Ancilla,
}

/// One tracked physical qubit.
#[derive(Debug, Clone)]
pub struct QubitRecord {
    pub fidelity: Fidelity,
    pub busy_until: f64,
    pub last_touch: f64,
    pub role: Role,
}

impl QubitRecord {
    fn fresh(role: Role) -> QubitRecord {
        QubitRecord {
            fidelity: Fidelity::ONE,
            busy_until: 0.0,
            last_touch: 0.0,
            role,
        }
    }
}

/// Accrues decoherence on a record up to `now` and advances `last_touch`.
pub fn accrue_decoherence(record: &mut QubitRecord, now: f64, lambda: f64) {
    debug_assert!(now >= record.last_touch);
    record.fidelity = apply_decoherence(record.fidelity, now - record.last_touch, lambda);
    record.last_touch = now;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEntry {
    pub index: usize,
    pub kind: GateKind,
    pub operands: Vec<usize>,
    pub start: f64,
    pub end: f64,
}

/// Per-instruction (start, end) times of one scheduled stream.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    pub entries: Vec<TimelineEntry>,
    pub total_time: f64,
}

impl Timeline {
    /// CSV dump: `index,kind,operands,start,end` with operands space-joined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,kind,operands,start,end\n");
        for e in &self.entries {
            let ops = e
                .operands
                .iter()
                .map(|q| q.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("{},{},{},{},{}\n", e.index, e.kind, ops, e.start, e.end));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("instruction {0}: error correction is not a physical operation")]
    ErrorCorrectAtPhysicalLevel(usize),
    #[error("circuit is not at the physical level (level {0})")]
    NotPhysical(u32),
}

/// Execution state of one run: qubit records, the free-ancilla pool and the
/// recorded timeline.
pub struct Machine {
    pub params: PhysicalParams,
    records: Vec<QubitRecord>,
    /// Free ancillas, keyed by (busy_until bits, id) so the earliest-available
    /// qubit is reused first. Positive finite f64 bit patterns order like the
    /// values themselves.
    pool: std::collections::BTreeSet<(u64, usize)>,
    ancillas_in_use: usize,
    high_water: usize,
    total_created: usize,
    max_end: f64,
    timeline: Vec<TimelineEntry>,
    record_timeline: bool,
}

impl Machine {
    pub fn new(params: PhysicalParams) -> Machine {
        Machine {
            params,
            records: Vec::new(),
            pool: std::collections::BTreeSet::new(),
            ancillas_in_use: 0,
            high_water: 0,
            total_created: 0,
            max_end: 0.0,
            timeline: Vec::new(),
            record_timeline: false,
        }
    }

    pub fn with_timeline(mut self) -> Machine {
        self.record_timeline = true;
        self
    }

    pub fn create_data(&mut self, n: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            self.records.push(QubitRecord::fresh(Role::Data));
            ids.push(self.records.len() - 1);
        }
        ids
    }

    /// Takes `n` ancillas, reusing freed ones (earliest available first)
    /// before creating new ones. Reused ancillas keep their stale fidelity
    /// until a PrepZero (or a block override) resets it.
    pub fn acquire_ancilla(&mut self, n: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            if let Some(&key) = self.pool.iter().next() {
                self.pool.remove(&key);
                ids.push(key.1);
            } else {
                self.records.push(QubitRecord::fresh(Role::Ancilla));
                ids.push(self.records.len() - 1);
            }
        }
        self.ancillas_in_use += n;
        self.high_water = self.high_water.max(self.ancillas_in_use);
        self.total_created = self
            .total_created
            .max(self.records.iter().filter(|r| r.role == Role::Ancilla).count());
        ids
    }

    pub fn release_ancilla(&mut self, ids: &[usize]) {
        for &id in ids {
            debug_assert_eq!(self.records[id].role, Role::Ancilla);
            self.pool.insert((self.records[id].busy_until.to_bits(), id));
        }
        self.ancillas_in_use -= ids.len();
    }

    /// Removes qubits from the ancilla accounting permanently (teleportation
    /// outputs become data).
    pub fn convert_to_data(&mut self, ids: &[usize]) {
        for &id in ids {
            self.records[id].role = Role::Data;
        }
        self.ancillas_in_use -= ids.len();
    }

    /// Returns retired data qubits to the pool as reusable ancillas.
    pub fn retire_to_pool(&mut self, ids: &[usize]) {
        for &id in ids {
            self.records[id].role = Role::Ancilla;
            self.pool.insert((self.records[id].busy_until.to_bits(), id));
        }
    }

    /// Schedules one physical instruction ASAP and returns (start, end).
    ///
    /// With `track_fidelity`, applies the worst-case propagation rules:
    /// single-qubit gates multiply by the gate fidelity, CNOT/Toffoli set
    /// every operand to the product of all input fidelities times the gate
    /// fidelity, PrepZero resets to the preparation fidelity. `weight < 1`
    /// models a classically conditioned operation that fires with that
    /// probability: the update is the expectation over the branch.
    pub fn apply(
        &mut self,
        kind: GateKind,
        operands: &[usize],
        weight: f64,
        track_fidelity: bool,
    ) -> (f64, f64) {
        let lambda = self.params.decoherence_rate;
        let start = operands
            .iter()
            .map(|&q| self.records[q].busy_until)
            .fold(0.0, f64::max);
        for &q in operands {
            accrue_decoherence(&mut self.records[q], start, lambda);
        }
        let end = start + self.params.duration(kind);
        if track_fidelity {
            let gate_f = self.params.fidelity(kind);
            match kind {
                GateKind::PrepZero => {
                    self.records[operands[0]].fidelity = gate_f;
                }
                GateKind::MeasureZ | GateKind::ErrorCorrect => {}
                GateKind::Cnot | GateKind::Toffoli => {
                    let product = operands
                        .iter()
                        .map(|&q| self.records[q].fidelity.value())
                        .product::<f64>()
                        * gate_f.value();
                    for &q in operands {
                        let old = self.records[q].fidelity.value();
                        self.records[q].fidelity =
                            Fidelity::new(old + weight * (product - old));
                    }
                }
                _ => {
                    let q = operands[0];
                    let old = self.records[q].fidelity.value();
                    let worst = old * gate_f.value();
                    self.records[q].fidelity = Fidelity::new(old + weight * (worst - old));
                }
            }
        }
        for &q in operands {
            self.records[q].busy_until = end;
            self.records[q].last_touch = end;
        }
        self.max_end = self.max_end.max(end);
        if self.record_timeline {
            self.timeline.push(TimelineEntry {
                index: self.timeline.len(),
                kind,
                operands: operands.to_vec(),
                start,
                end,
            });
        }
        (start, end)
    }

    /// Extends the busy window of the given qubits (repeat-until-success
    /// retry accounting).
    pub fn stretch_busy(&mut self, ids: &[usize], extra: f64) {
        if extra <= 0.0 {
            return;
        }
        for &id in ids {
            self.records[id].busy_until += extra;
            self.records[id].last_touch = self.records[id].busy_until;
            self.max_end = self.max_end.max(self.records[id].busy_until);
        }
    }

    pub fn fidelity(&self, id: usize) -> Fidelity {
        self.records[id].fidelity
    }

    pub fn set_fidelity(&mut self, id: usize, f: Fidelity) {
        self.records[id].fidelity = f;
    }

    pub fn record(&self, id: usize) -> &QubitRecord {
        &self.records[id]
    }

    /// Accrues trailing decoherence on every data qubit up to the end of the
    /// run.
    pub fn finish(&mut self) {
        let lambda = self.params.decoherence_rate;
        let end = self.max_end;
        for rec in &mut self.records {
            if rec.role == Role::Data && rec.last_touch < end {
                accrue_decoherence(rec, end, lambda);
            }
        }
    }

    pub fn total_time(&self) -> f64 {
        self.max_end
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn total_qubits(&self) -> usize {
        self.records.len()
    }

    pub fn ancillas_created(&self) -> usize {
        self.records.iter().filter(|r| r.role == Role::Ancilla).count()
    }

    pub fn take_timeline(&mut self) -> Timeline {
        Timeline {
            entries: std::mem::take(&mut self.timeline),
            total_time: self.max_end,
        }
    }
}

/// ASAP-schedules a physical-level circuit and returns its timeline.
pub fn schedule(circuit: &Circuit, params: &PhysicalParams) -> Result<Timeline, ScheduleError> {
    if circuit.level() != 0 {
        return Err(ScheduleError::NotPhysical(circuit.level()));
    }
    let mut machine = Machine::new(params.clone()).with_timeline();
    machine.create_data(circuit.qubit_count());
    for (idx, inst) in circuit.instructions.iter().enumerate() {
        if inst.kind == GateKind::ErrorCorrect {
            return Err(ScheduleError::ErrorCorrectAtPhysicalLevel(idx));
        }
        let operands: Vec<usize> = inst.operands.iter().map(|&q| circuit.flat_index(q)).collect();
        machine.apply(inst.kind, &operands, 1.0, true);
    }
    machine.finish();
    Ok(machine.take_timeline())
}
