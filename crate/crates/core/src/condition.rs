//! Condition logic block: up to eight comparators over the operand space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::operand::{Operand, OperandView};

pub const MAX_CONDITIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Gt,
    Ge,
    Eq,
    Le,
    Lt,
}

impl CompareOp {
    /// Unsigned 32-bit comparison.
    pub fn eval(self, lhs: u32, rhs: u32) -> bool {
        match self {
            CompareOp::Gt => lhs > rhs,
            CompareOp::Ge => lhs >= rhs,
            CompareOp::Eq => lhs == rhs,
            CompareOp::Le => lhs <= rhs,
            CompareOp::Lt => lhs < rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
            CompareOp::Le => "<=",
            CompareOp::Lt => "<",
        }
    }
}

impl FromStr for CompareOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            ">" | "GT" => CompareOp::Gt,
            ">=" | "GE" => CompareOp::Ge,
            "==" | "=" | "EQ" => CompareOp::Eq,
            "<=" | "LE" => CompareOp::Le,
            "<" | "LT" => CompareOp::Lt,
            _ => return Err(format!("unknown comparison `{s}`")),
        })
    }
}

/// `lhs op rhs`, written in configs as e.g. `R0 >= G0` or `GE R0 G0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConditionSpec {
    pub op: CompareOp,
    pub lhs: Operand,
    pub rhs: Operand,
}

impl ConditionSpec {
    pub fn new(op: CompareOp, lhs: Operand, rhs: Operand) -> Self {
        ConditionSpec { op, lhs, rhs }
    }

    pub fn eval(&self, view: &OperandView<'_>) -> bool {
        self.op.eval(view.get(self.lhs), view.get(self.rhs))
    }
}

impl fmt::Display for ConditionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

impl FromStr for ConditionSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("condition `{s}`: expected `lhs op rhs`"));
        };
        // Prefix form: `GE R0 G0`.
        if let Ok(op) = a.parse::<CompareOp>() {
            if b.parse::<Operand>().is_ok() {
                return Ok(ConditionSpec::new(op, b.parse()?, c.parse()?));
            }
        }
        Ok(ConditionSpec::new(b.parse()?, a.parse()?, c.parse()?))
    }
}

impl Serialize for ConditionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Condition outcomes; bit i holds c_i. Unconfigured slots are 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ConditionVector(pub u8);

impl ConditionVector {
    pub fn get(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }
}

impl fmt::Display for ConditionVector {
    /// c0 first, matching the row pattern strings in program files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..MAX_CONDITIONS {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ConditionVector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != MAX_CONDITIONS {
            return Err(format!("condition vector `{s}` must have {MAX_CONDITIONS} digits"));
        }
        s.chars()
            .enumerate()
            .try_fold(ConditionVector(0), |acc, (i, ch)| match ch {
                '0' => Ok(acc),
                '1' => Ok(ConditionVector(acc.0 | 1 << i)),
                _ => Err(format!("condition vector `{s}`: unexpected `{ch}`")),
            })
    }
}

impl Serialize for ConditionVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn evaluate(specs: &[ConditionSpec], view: &OperandView<'_>) -> ConditionVector {
    debug_assert!(specs.len() <= MAX_CONDITIONS);
    let bits = specs
        .iter()
        .take(MAX_CONDITIONS)
        .enumerate()
        .fold(0u8, |acc, (i, spec)| acc | (spec.eval(view) as u8) << i);
    ConditionVector(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operand::FlowRegisters;
    use proptest::prelude::*;

    fn view<'a>(r: &'a FlowRegisters, g: &'a [u32; 4], h: &'a [u32; 8]) -> OperandView<'a> {
        OperandView {
            flow: r,
            global: g,
            header: h,
        }
    }

    #[test]
    fn port_scan_rate_threshold() {
        let mut r = [0; 8];
        r[0] = 25;
        let g = [20, 0, 0, 0];
        let h = [0; 8];
        let c = evaluate(&["R0 >= G0".parse().unwrap()], &view(&r, &g, &h));
        assert!(c.get(0));
    }

    #[test]
    fn reflexive_equality() {
        let mut r = [0; 8];
        r[1] = 0xDEAD;
        let c = evaluate(&["R1 == R1".parse().unwrap()], &view(&r, &[0; 4], &[0; 8]));
        assert_eq!(c, ConditionVector(1));
    }

    #[test]
    fn token_bucket_case_one() {
        let mut r = [0; 8];
        r[0] = 800;
        r[1] = 1100;
        let mut h = [0; 8];
        h[6] = 1010;
        let specs = ["H6 >= R0".parse().unwrap(), "H6 <= R1".parse().unwrap()];
        let c = evaluate(&specs, &view(&r, &[0; 4], &h));
        assert_eq!((c.get(0), c.get(1)), (true, true));
        assert_eq!(c.to_string(), "11000000");
        assert_eq!("11000000".parse::<ConditionVector>().unwrap(), c);
    }

    #[test]
    fn unconfigured_slots_are_zero() {
        let c = evaluate(&[], &view(&[0; 8], &[0; 4], &[0; 8]));
        assert_eq!(c, ConditionVector(0));
    }

    #[test]
    fn prefix_form_parses() {
        let a: ConditionSpec = "GE R0 G0".parse().unwrap();
        let b: ConditionSpec = "R0 >= G0".parse().unwrap();
        assert_eq!(a, b);
        assert!("R0 >> G0".parse::<ConditionSpec>().is_err());
        assert!("R0 >=".parse::<ConditionSpec>().is_err());
    }

    proptest! {
        #[test]
        fn trichotomy(a in any::<u32>(), b in any::<u32>()) {
            let lt = CompareOp::Lt.eval(a, b);
            let eq = CompareOp::Eq.eval(a, b);
            let gt = CompareOp::Gt.eval(a, b);
            prop_assert_eq!(lt as u8 + eq as u8 + gt as u8, 1);
            prop_assert_eq!(CompareOp::Ge.eval(a, b), gt || eq);
            prop_assert_eq!(CompareOp::Le.eval(a, b), lt || eq);
        }
    }
}
