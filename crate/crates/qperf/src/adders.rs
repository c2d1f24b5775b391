//! Generators for the two benchmark adders: the ripple-carry adder (Cuccaro
//! MAJ/UMA ladder) and the carry-lookahead adder (Brent-Kung prefix tree).
//!
//! Both compute `b <- a + b` in place with an explicit carry-out bit, using
//! only {X, CNOT, Toffoli} plus PrepZero on ancillas, so level-0 runs are
//! classically checkable. The lookahead adder uncomputes its block-propagate
//! products and its four lowest carries; the remaining carry scratch is left
//! to the pool, which re-prepares reused ancillas.

use crate::circuit::{Circuit, GateKind, QubitRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdderKind {
    Qrca,
    Qcla,
}

impl std::str::FromStr for AdderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<AdderKind, String> {
        match s.to_ascii_lowercase().as_str() {
            "qrca" => Ok(AdderKind::Qrca),
            "qcla" => Ok(AdderKind::Qcla),
            other => Err(format!("unknown adder `{other}` (expected qrca or qcla)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdderError {
    #[error("adder width must be at least 1")]
    WidthZero,
}

/// Builds the requested adder at level 0.
pub fn build(kind: AdderKind, n: usize) -> Result<Circuit, AdderError> {
    match kind {
        AdderKind::Qrca => build_qrca(n),
        AdderKind::Qcla => build_qcla(n),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Wire {
    A(usize),
    B(usize),
    Cin,
    Cout,
    G(usize),
    P(usize),
}

struct Builder {
    ops: Vec<(GateKind, Vec<Wire>)>,
    panc_count: usize,
}

impl Builder {
    fn new() -> Builder {
        Builder { ops: Vec::new(), panc_count: 0 }
    }

    fn push(&mut self, kind: GateKind, wires: Vec<Wire>) {
        self.ops.push((kind, wires));
    }

    fn fresh_p(&mut self) -> Wire {
        let w = Wire::P(self.panc_count);
        self.panc_count += 1;
        w
    }

    fn materialize(self, n: usize, use_cin: bool, ganc: usize) -> Circuit {
        let mut c = Circuit::new();
        let ra = c.add_register("a", n, 0);
        let rb = c.add_register("b", n, 0);
        let rcin = if use_cin { c.add_register("cin", 1, 0) } else { usize::MAX };
        let rcout = c.add_register("cout", 1, 0);
        let rg = if ganc > 0 { c.add_register("g", ganc, 0) } else { usize::MAX };
        let rp = if self.panc_count > 0 {
            c.add_register("p", self.panc_count, 0)
        } else {
            usize::MAX
        };
        let map = |w: Wire| -> QubitRef {
            match w {
                Wire::A(i) => QubitRef { register: ra, bit: i },
                Wire::B(i) => QubitRef { register: rb, bit: i },
                Wire::Cin => QubitRef { register: rcin, bit: 0 },
                Wire::Cout => QubitRef { register: rcout, bit: 0 },
                Wire::G(i) => QubitRef { register: rg, bit: i },
                Wire::P(i) => QubitRef { register: rp, bit: i },
            }
        };
        // Ancillas start in |0>.
        if use_cin {
            c.push(GateKind::PrepZero, vec![map(Wire::Cin)]);
        }
        c.push(GateKind::PrepZero, vec![map(Wire::Cout)]);
        for i in 0..ganc {
            c.push(GateKind::PrepZero, vec![map(Wire::G(i))]);
        }
        for i in 0..self.panc_count {
            c.push(GateKind::PrepZero, vec![map(Wire::P(i))]);
        }
        for (kind, wires) in self.ops {
            c.push(kind, wires.into_iter().map(map).collect());
        }
        c
    }
}

/// Ripple-carry adder: MAJ ladder up, carry-out copy, UMA ladder back.
/// Exactly 2n Toffoli gates; the carry-in ancilla is returned to zero.
pub fn build_qrca(n: usize) -> Result<Circuit, AdderError> {
    if n == 0 {
        return Err(AdderError::WidthZero);
    }
    let mut b = Builder::new();
    let carry_in = |i: usize| if i == 0 { Wire::Cin } else { Wire::A(i - 1) };
    for i in 0..n {
        // MAJ(c, b_i, a_i)
        b.push(GateKind::Cnot, vec![Wire::A(i), Wire::B(i)]);
        b.push(GateKind::Cnot, vec![Wire::A(i), carry_in(i)]);
        b.push(GateKind::Toffoli, vec![carry_in(i), Wire::B(i), Wire::A(i)]);
    }
    b.push(GateKind::Cnot, vec![Wire::A(n - 1), Wire::Cout]);
    for i in (0..n).rev() {
        // UMA(c, b_i, a_i)
        b.push(GateKind::Toffoli, vec![carry_in(i), Wire::B(i), Wire::A(i)]);
        b.push(GateKind::Cnot, vec![Wire::A(i), carry_in(i)]);
        b.push(GateKind::Cnot, vec![carry_in(i), Wire::B(i)]);
    }
    Ok(b.materialize(n, true, 0))
}

/// Carry-lookahead adder: generate/propagate leaves, Brent-Kung prefix tree
/// over the carry scratch register, in-place sum, then uncomputation of the
/// propagate products and of the four lowest carries.
pub fn build_qcla(n: usize) -> Result<Circuit, AdderError> {
    if n == 0 {
        return Err(AdderError::WidthZero);
    }
    if n == 1 {
        // carry-out = a*b, sum = a xor b
        let mut b = Builder::new();
        b.push(GateKind::Toffoli, vec![Wire::A(0), Wire::B(0), Wire::Cout]);
        b.push(GateKind::Cnot, vec![Wire::A(0), Wire::B(0)]);
        return Ok(b.materialize(1, false, 0));
    }
    let mut bld = Builder::new();

    // Leaves: g_i = a_i * b_i into scratch, p_i = a_i ^ b_i on the b wires.
    for i in 0..n {
        bld.push(GateKind::Toffoli, vec![Wire::A(i), Wire::B(i), Wire::G(i)]);
    }
    for i in 0..n {
        bld.push(GateKind::Cnot, vec![Wire::A(i), Wire::B(i)]);
    }

    // Lazily built block-propagate products P_d[hi] for the block of width
    // 2^d ending at position hi. Level 0 products are the p_i on the b wires.
    let mut p_cache: std::collections::BTreeMap<(u32, usize), Wire> =
        std::collections::BTreeMap::new();
    let mut p_log: Vec<(GateKind, Vec<Wire>)> = Vec::new();
    fn get_p(
        d: u32,
        hi: usize,
        bld: &mut Builder,
        cache: &mut std::collections::BTreeMap<(u32, usize), Wire>,
        log: &mut Vec<(GateKind, Vec<Wire>)>,
    ) -> Wire {
        if d == 0 {
            return Wire::B(hi);
        }
        if let Some(&w) = cache.get(&(d, hi)) {
            return w;
        }
        let half = 1usize << (d - 1);
        let upper = get_p(d - 1, hi, bld, cache, log);
        let lower = get_p(d - 1, hi - half, bld, cache, log);
        let target = bld.fresh_p();
        bld.push(GateKind::Toffoli, vec![lower, upper, target]);
        log.push((GateKind::Toffoli, vec![lower, upper, target]));
        cache.insert((d, hi), target);
        target
    }

    // Up-sweep: G[hi] ^= P_{d-1}[hi] * G[lo].
    let mut d = 1u32;
    while (1usize << d) <= n {
        let step = 1usize << d;
        let half = step >> 1;
        let mut hi = step - 1;
        while hi < n {
            let p_upper = get_p(d - 1, hi, &mut bld, &mut p_cache, &mut p_log);
            bld.push(GateKind::Toffoli, vec![p_upper, Wire::G(hi - half), Wire::G(hi)]);
            hi += step;
        }
        d += 1;
    }
    // Down-sweep: fill the non-power prefixes.
    let d_max = d - 1;
    for d in (1..=d_max).rev() {
        let step = 1usize << d;
        let half = step >> 1;
        let mut hi = step + half - 1;
        while hi < n {
            let p_upper = get_p(d - 1, hi, &mut bld, &mut p_cache, &mut p_log);
            bld.push(GateKind::Toffoli, vec![p_upper, Wire::G(hi - half), Wire::G(hi)]);
            hi += step;
        }
    }

    // Block-propagate products are no longer needed; uncompute them while the
    // b wires still hold the leaf p's.
    for (kind, wires) in p_log.iter().rev() {
        bld.push(*kind, wires.clone());
    }

    // Sum: b_i = p_i ^ c_i, carry-out from the full prefix.
    for i in 1..n {
        bld.push(GateKind::Cnot, vec![Wire::G(i - 1), Wire::B(i)]);
    }
    bld.push(GateKind::Cnot, vec![Wire::G(n - 1), Wire::Cout]);

    // Ripple-erase the lowest carries (highest index first so the lower
    // carry is still available): c_{i+1} = g_i ^ p_i * c_i.
    let erase_upto = n.min(4);
    for i in (0..erase_upto).rev() {
        if i >= 1 {
            bld.push(GateKind::Cnot, vec![Wire::G(i - 1), Wire::B(i)]); // b_i = p_i
            bld.push(GateKind::Toffoli, vec![Wire::B(i), Wire::G(i - 1), Wire::G(i)]);
            bld.push(GateKind::Cnot, vec![Wire::A(i), Wire::B(i)]); // b_i = original b
            bld.push(GateKind::Toffoli, vec![Wire::A(i), Wire::B(i), Wire::G(i)]);
            bld.push(GateKind::Cnot, vec![Wire::A(i), Wire::B(i)]);
            bld.push(GateKind::Cnot, vec![Wire::G(i - 1), Wire::B(i)]); // back to s_i
        } else {
            bld.push(GateKind::Cnot, vec![Wire::A(0), Wire::B(0)]);
            bld.push(GateKind::Toffoli, vec![Wire::A(0), Wire::B(0), Wire::G(0)]);
            bld.push(GateKind::Cnot, vec![Wire::A(0), Wire::B(0)]);
        }
    }

    Ok(bld.materialize(n, false, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrca_toffoli_count_is_2n() {
        for n in [1usize, 2, 4, 8, 16, 32] {
            let c = build_qrca(n).unwrap();
            assert_eq!(c.count_of(GateKind::Toffoli), 2 * n, "n={n}");
        }
    }

    #[test]
    fn qcla_toffoli_count_formula() {
        // 5n - 3*log2(n) + 3 for power-of-two widths >= 4.
        for (n, expect) in [(4usize, 17usize), (8, 34), (16, 71), (32, 148)] {
            let c = build_qcla(n).unwrap();
            assert_eq!(c.count_of(GateKind::Toffoli), expect, "n={n}");
            let t = c.count_of(GateKind::Toffoli);
            assert!(t >= 4 * n && t <= 5 * n, "n={n}: {t} outside [4n,5n]");
        }
    }

    #[test]
    fn gate_set_closure() {
        for c in [build_qrca(5).unwrap(), build_qcla(5).unwrap()] {
            for inst in &c.instructions {
                assert!(matches!(
                    inst.kind,
                    GateKind::X | GateKind::Cnot | GateKind::Toffoli | GateKind::PrepZero
                ));
            }
        }
    }

    #[test]
    fn width_zero_rejected() {
        assert!(build_qrca(0).is_err());
        assert!(build_qcla(0).is_err());
    }

    #[test]
    fn qcla_depth_grows_logarithmically() {
        let d16 = build_qcla(16).unwrap().depth() as f64;
        let d32 = build_qcla(32).unwrap().depth() as f64;
        let d64 = build_qcla(64).unwrap().depth() as f64;
        assert!(d32 - d16 <= 8.0, "d16={d16} d32={d32}");
        assert!(d64 - d32 <= 8.0, "d32={d32} d64={d64}");
        let r16 = build_qrca(16).unwrap().depth() as f64;
        let r32 = build_qrca(32).unwrap().depth() as f64;
        assert!(r32 / r16 > 1.8);
    }
}
