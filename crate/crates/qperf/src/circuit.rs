//! Circuit representation, text parsing/serialization and static analyses.
//!
//! A circuit is a list of register declarations plus an ordered instruction
//! stream over the universal set {PrepZero, X, Y, Z, H, CNOT, Toffoli,
//! MeasureZ, ErrorCorrect}. Registers carry an encoding level; level 0 is
//! physical. Circuits are immutable after construction and all analyses here
//! are pure.

use std::collections::BTreeMap;
use std::fmt;

/// The closed universal operation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GateKind {
    PrepZero,
    X,
    Y,
    Z,
    H,
    Cnot,
    Toffoli,
    MeasureZ,
    ErrorCorrect,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Cnot => 2,
            GateKind::Toffoli => 3,
            _ => 1,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            GateKind::PrepZero => "prep",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::H => "h",
            GateKind::Cnot => "cnot",
            GateKind::Toffoli => "toffoli",
            GateKind::MeasureZ => "measz",
            GateKind::ErrorCorrect => "ec",
        }
    }

    /// Gates (as opposed to preparation, measurement and EC pseudo-ops).
    pub fn is_unitary_gate(self) -> bool {
        !matches!(
            self,
            GateKind::PrepZero | GateKind::MeasureZ | GateKind::ErrorCorrect
        )
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One bit of a declared register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitRef {
    pub register: usize,
    pub bit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub width: usize,
    pub level: u32,
}

/// A single operation. Operand order: controls first for CNOT/Toffoli.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub kind: GateKind,
    pub operands: Vec<QubitRef>,
    /// Label receiving a MeasureZ result.
    pub target: Option<String>,
}

impl Instruction {
    pub fn gate(kind: GateKind, operands: Vec<QubitRef>) -> Instruction {
        Instruction {
            kind,
            operands,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Circuit {
    pub registers: Vec<Register>,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CircuitError {
    #[error("line {line}: unknown statement `{stmt}`")]
    UnknownStatement { line: usize, stmt: String },
    #[error("line {line}: malformed statement: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: register `{name}` not declared")]
    UndeclaredRegister { line: usize, name: String },
    #[error("line {line}: register `{name}` declared twice")]
    DuplicateRegister { line: usize, name: String },
    #[error("line {line}: bit {bit} out of range for register `{name}` of width {width}")]
    BitRange {
        line: usize,
        name: String,
        bit: usize,
        width: usize,
    },
    #[error("line {line}: {kind} expects {expected} operands, got {got}")]
    Arity {
        line: usize,
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: repeated operand")]
    RepeatedOperand { line: usize },
    #[error("cannot lower a level-0 circuit")]
    AlreadyPhysical,
}

impl Circuit {
    pub fn new() -> Circuit {
        Circuit::default()
    }

    /// Declares a register and returns its index.
    pub fn add_register(&mut self, name: &str, width: usize, level: u32) -> usize {
        self.registers.push(Register {
            name: name.to_string(),
            width,
            level,
        });
        self.registers.len() - 1
    }

    pub fn push(&mut self, kind: GateKind, operands: Vec<QubitRef>) {
        debug_assert_eq!(operands.len(), kind.arity());
        self.instructions.push(Instruction::gate(kind, operands));
    }

    /// Encoding level of the whole circuit: the maximum register level.
    pub fn level(&self) -> u32 {
        self.registers.iter().map(|r| r.level).max().unwrap_or(0)
    }

    /// Total declared qubits (register bits).
    pub fn qubit_count(&self) -> usize {
        self.registers.iter().map(|r| r.width).sum()
    }

    pub fn find_register(&self, name: &str) -> Option<usize> {
        self.registers.iter().position(|r| r.name == name)
    }

    /// Flat index of a register bit in declaration order.
    pub fn flat_index(&self, q: QubitRef) -> usize {
        self.registers[..q.register]
            .iter()
            .map(|r| r.width)
            .sum::<usize>()
            + q.bit
    }

    /// Exact per-kind instruction counts.
    pub fn gate_counts(&self) -> BTreeMap<GateKind, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instructions {
            *counts.entry(inst.kind).or_insert(0) += 1;
        }
        counts
    }

    pub fn count_of(&self, kind: GateKind) -> usize {
        self.instructions.iter().filter(|i| i.kind == kind).count()
    }

    /// Longest dependency chain, counting every instruction as one step.
    ///
    /// Two instructions depend on each other iff they share an operand.
    pub fn depth(&self) -> usize {
        let mut front: BTreeMap<QubitRef, usize> = BTreeMap::new();
        let mut depth = 0;
        for inst in &self.instructions {
            let start = inst
                .operands
                .iter()
                .map(|q| front.get(q).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            let level = start + 1;
            for q in &inst.operands {
                front.insert(*q, level);
            }
            depth = depth.max(level);
        }
        depth
    }

    /// Canonical text form; `parse` round-trips it.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for reg in &self.registers {
            if reg.level == 0 {
                out.push_str(&format!("qreg {} {}\n", reg.name, reg.width));
            } else {
                out.push_str(&format!("qreg {} {} {}\n", reg.name, reg.width, reg.level));
            }
        }
        for inst in &self.instructions {
            out.push_str(inst.kind.mnemonic());
            for q in &inst.operands {
                let reg = &self.registers[q.register];
                out.push_str(&format!(" {}[{}]", reg.name, q.bit));
            }
            if let Some(label) = &inst.target {
                out.push_str(&format!(" -> {label}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the one-statement-per-line text format (`;` also separates).
    pub fn parse(text: &str) -> Result<Circuit, CircuitError> {
        let mut circuit = Circuit::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let uncommented = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            for stmt in uncommented.split(';') {
                let stmt = stmt.trim();
                if stmt.is_empty() {
                    continue;
                }
                parse_statement(&mut circuit, stmt, line)?;
            }
        }
        Ok(circuit)
    }
}

fn parse_statement(circuit: &mut Circuit, stmt: &str, line: usize) -> Result<(), CircuitError> {
    let mut tokens = stmt.split_whitespace();
    let head = tokens.next().expect("statement is non-empty");
    let rest: Vec<&str> = tokens.collect();
    match head {
        "qreg" => {
            if rest.len() < 2 || rest.len() > 3 {
                return Err(CircuitError::Malformed {
                    line,
                    msg: "qreg expects `qreg <name> <width> [level]`".into(),
                });
            }
            let name = rest[0];
            if circuit.find_register(name).is_some() {
                return Err(CircuitError::DuplicateRegister {
                    line,
                    name: name.into(),
                });
            }
            let width: usize = rest[1].parse().map_err(|_| CircuitError::Malformed {
                line,
                msg: format!("bad width `{}`", rest[1]),
            })?;
            let level: u32 = match rest.get(2) {
                Some(tok) => tok.parse().map_err(|_| CircuitError::Malformed {
                    line,
                    msg: format!("bad level `{tok}`"),
                })?,
                None => 0,
            };
            circuit.add_register(name, width, level);
            Ok(())
        }
        "measz" => {
            // form: measz r[i] -> label
            if rest.len() != 3 || rest[1] != "->" {
                return Err(CircuitError::Malformed {
                    line,
                    msg: "measz expects `measz <ref> -> <label>`".into(),
                });
            }
            let q = parse_ref(circuit, rest[0], line)?;
            circuit.instructions.push(Instruction {
                kind: GateKind::MeasureZ,
                operands: vec![q],
                target: Some(rest[2].to_string()),
            });
            Ok(())
        }
        mnemonic => {
            let kind = match mnemonic {
                "prep" => GateKind::PrepZero,
                "x" => GateKind::X,
                "y" => GateKind::Y,
                "z" => GateKind::Z,
                "h" => GateKind::H,
                "cnot" => GateKind::Cnot,
                "toffoli" => GateKind::Toffoli,
                "ec" => GateKind::ErrorCorrect,
                _ => {
                    return Err(CircuitError::UnknownStatement {
                        line,
                        stmt: stmt.into(),
                    })
                }
            };
            if rest.len() != kind.arity() {
                return Err(CircuitError::Arity {
                    line,
                    kind,
                    expected: kind.arity(),
                    got: rest.len(),
                });
            }
            let operands = rest
                .iter()
                .map(|tok| parse_ref(circuit, tok, line))
                .collect::<Result<Vec<_>, _>>()?;
            for i in 0..operands.len() {
                for j in i + 1..operands.len() {
                    if operands[i] == operands[j] {
                        return Err(CircuitError::RepeatedOperand { line });
                    }
                }
            }
            circuit.push(kind, operands);
            Ok(())
        }
    }
}

fn parse_ref(circuit: &Circuit, token: &str, line: usize) -> Result<QubitRef, CircuitError> {
    let (name, idx_part) = token.split_once('[').ok_or_else(|| CircuitError::Malformed {
        line,
        msg: format!("expected `reg[i]`, got `{token}`"),
    })?;
    let idx_str = idx_part
        .strip_suffix(']')
        .ok_or_else(|| CircuitError::Malformed {
            line,
            msg: format!("missing `]` in `{token}`"),
        })?;
    let bit: usize = idx_str.parse().map_err(|_| CircuitError::Malformed {
        line,
        msg: format!("bad bit index `{idx_str}`"),
    })?;
    let register = circuit
        .find_register(name)
        .ok_or_else(|| CircuitError::UndeclaredRegister {
            line,
            name: name.into(),
        })?;
    let width = circuit.registers[register].width;
    if bit >= width {
        return Err(CircuitError::BitRange {
            line,
            name: name.into(),
            bit,
            width,
        });
    }
    Ok(QubitRef { register, bit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_single_h() {
        let c = Circuit::parse("qreg a 1; h a[0]").unwrap();
        assert_eq!(c.instructions.len(), 1);
        assert_eq!(c.instructions[0].kind, GateKind::H);
        assert_eq!(c.level(), 0);
    }

    #[test]
    fn repeated_operand_rejected() {
        let err = Circuit::parse("qreg a 2\ncnot a[0] a[0]").unwrap_err();
        assert_eq!(err, CircuitError::RepeatedOperand { line: 2 });
    }

    #[test]
    fn undeclared_and_out_of_range() {
        assert!(matches!(
            Circuit::parse("h b[0]").unwrap_err(),
            CircuitError::UndeclaredRegister { .. }
        ));
        assert!(matches!(
            Circuit::parse("qreg a 2\nx a[2]").unwrap_err(),
            CircuitError::BitRange { .. }
        ));
    }

    #[test]
    fn arity_mismatch() {
        assert!(matches!(
            Circuit::parse("qreg a 3\ncnot a[0] a[1] a[2]").unwrap_err(),
            CircuitError::Arity { .. }
        ));
    }

    #[test]
    fn measz_with_label() {
        let c = Circuit::parse("qreg a 1\nmeasz a[0] -> m0").unwrap();
        assert_eq!(c.instructions[0].target.as_deref(), Some("m0"));
        let text = c.serialize();
        assert!(text.contains("measz a[0] -> m0"));
        assert_eq!(Circuit::parse(&text).unwrap(), c);
    }

    #[test]
    fn depth_of_chain() {
        let c = Circuit::parse("qreg q 4\ncnot q[0] q[1]\ncnot q[1] q[2]\ncnot q[2] q[3]").unwrap();
        assert_eq!(c.depth(), 3);
        assert_eq!(Circuit::new().depth(), 0);
    }

    #[test]
    fn parallel_depth() {
        let c = Circuit::parse("qreg q 4\nh q[0]\nh q[1]\nh q[2]\nh q[3]").unwrap();
        assert_eq!(c.depth(), 1);
    }

    #[test]
    fn gate_counts_sum_to_len() {
        let c = Circuit::parse("qreg q 3\nh q[0]\ncnot q[0] q[1]\ntoffoli q[0] q[1] q[2]\nh q[1]")
            .unwrap();
        let counts = c.gate_counts();
        assert_eq!(counts[&GateKind::H], 2);
        assert_eq!(counts.values().sum::<usize>(), c.instructions.len());
    }

    fn arb_circuit() -> impl Strategy<Value = Circuit> {
        // Small random circuits over two registers.
        let widths = (1usize..5, 1usize..5);
        widths.prop_flat_map(|(wa, wb)| {
            let gate = (0usize..6, 0usize..(wa + wb), 0usize..(wa + wb), 0usize..(wa + wb));
            proptest::collection::vec(gate, 0..20).prop_map(move |gates| {
                let mut c = Circuit::new();
                let ra = c.add_register("a", wa, 0);
                let rb = c.add_register("b", wb, 0);
                let lookup = |i: usize| {
                    if i < wa {
                        QubitRef { register: ra, bit: i }
                    } else {
                        QubitRef {
                            register: rb,
                            bit: i - wa,
                        }
                    }
                };
                for (kind_idx, q0, q1, q2) in gates {
                    let (kind, arity) = match kind_idx {
                        0 => (GateKind::PrepZero, 1),
                        1 => (GateKind::X, 1),
                        2 => (GateKind::H, 1),
                        3 => (GateKind::Cnot, 2),
                        4 => (GateKind::Toffoli, 3),
                        _ => (GateKind::ErrorCorrect, 1),
                    };
                    let mut ops = vec![q0, q1, q2];
                    ops.truncate(arity);
                    ops.sort_unstable();
                    ops.dedup();
                    if ops.len() != arity {
                        continue;
                    }
                    c.push(kind, ops.into_iter().map(lookup).collect());
                }
                c
            })
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip(c in arb_circuit()) {
            let parsed = Circuit::parse(&c.serialize()).unwrap();
            prop_assert_eq!(parsed, c);
        }

        #[test]
        fn counts_total_matches(c in arb_circuit()) {
            prop_assert_eq!(c.gate_counts().values().sum::<usize>(), c.instructions.len());
        }
    }
}
