//! Identities and runtime values.
//!
//! References, objects and processors all have built-in identities drawn
//! from one monotonically increasing counter held by the state, which makes
//! traces reproducible from (program, schedule) alone.

use std::fmt;

/// A reference to an object. The distinguished void reference is id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ref(pub u64);

impl Ref {
    pub const VOID: Ref = Ref(0);

    pub fn is_void(&self) -> bool {
        *self == Ref::VOID
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_void() {
            write!(f, "void")
        } else {
            write!(f, "r{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjId(pub u64);

impl fmt::Display for ObjId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

/// An autonomous thread of control owning a region of objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Proc(pub u64);

impl fmt::Display for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A value stored in an attribute, an environment slot, or carried on a
/// channel: a reference, a processor, or one of the basic values that the
/// `item` attribute of a basic-class object represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Ref(Ref),
    Proc(Proc),
    Bool(bool),
    Int(i64),
    Char(char),
}

impl Value {
    pub const VOID: Value = Value::Ref(Ref::VOID);

    pub fn as_ref(&self) -> Option<Ref> {
        match self {
            Value::Ref(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_proc(&self) -> Option<Proc> {
        match self {
            Value::Proc(p) => Some(*p),
            _ => None,
        }
    }
}

impl From<Ref> for Value {
    fn from(r: Ref) -> Value {
        Value::Ref(r)
    }
}

impl From<Proc> for Value {
    fn from(p: Proc) -> Value {
        Value::Proc(p)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Ref(r) => write!(f, "{r}"),
            Value::Proc(p) => write!(f, "{p}"),
            Value::Bool(true) => write!(f, "true"),
            Value::Bool(false) => write!(f, "false"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Char(c) => write!(f, "'{c}'"),
        }
    }
}
