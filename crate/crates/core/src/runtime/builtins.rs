//! Intrinsic bodies of the built-in features.
//!
//! These run as atomic feature applications: arguments were already bound
//! by `push_env_with_feature` (so expanded actuals are copies), the result
//! object is created fresh on the executing processor, mirroring where a
//! literal expression would place it.

use crate::frontend::ir::{BuiltinOp, FeatureId, ProgramIR};
use crate::state::{Proc, Ref, State, Value};

/// Runs a built-in feature on `p` with target `r0`. Returns the result
/// reference for functions, `None` for procedures. Errors are contract
/// violations (bad index, void argument) reported as diagnostics.
pub fn execute(
    state: &State,
    ir: &ProgramIR,
    p: Proc,
    op: BuiltinOp,
    feature: FeatureId,
    r0: Ref,
) -> Result<(State, Option<Ref>), String> {
    let _ = feature;
    let formal_ref = |name: &str| -> Result<Ref, String> {
        state
            .env_val(p, name)
            .map_err(|e| e.to_string())?
            .as_ref()
            .ok_or_else(|| format!("argument '{name}' is not a reference"))
    };
    let int_of = |r: Ref, what: &str| -> Result<i64, String> {
        if r.is_void() {
            return Err(format!("{what} is void"));
        }
        match state
            .ref_obj(r)
            .map_err(|e| e.to_string())?
            .att_val("item")
            .map_err(|e| e.to_string())?
        {
            Value::Int(v) => Ok(v),
            other => Err(format!("{what} holds {other}, not an integer")),
        }
    };
    let bool_of = |r: Ref, what: &str| -> Result<bool, String> {
        if r.is_void() {
            return Err(format!("{what} is void"));
        }
        match state
            .ref_obj(r)
            .map_err(|e| e.to_string())?
            .att_val("item")
            .map_err(|e| e.to_string())?
        {
            Value::Bool(v) => Ok(v),
            other => Err(format!("{what} holds {other}, not a boolean")),
        }
    };
    let char_of = |r: Ref, what: &str| -> Result<char, String> {
        if r.is_void() {
            return Err(format!("{what} is void"));
        }
        match state
            .ref_obj(r)
            .map_err(|e| e.to_string())?
            .att_val("item")
            .map_err(|e| e.to_string())?
        {
            Value::Char(v) => Ok(v),
            other => Err(format!("{what} holds {other}, not a character")),
        }
    };

    match op {
        BuiltinOp::IntPlus | BuiltinOp::IntMinus => {
            let a = int_of(r0, "target")?;
            let b = int_of(formal_ref("other")?, "argument")?;
            let v = match op {
                BuiltinOp::IntPlus => a.wrapping_add(b),
                _ => a.wrapping_sub(b),
            };
            make_basic(state, ir, p, ir.integer_class, Value::Int(v)).map(|(s, r)| (s, Some(r)))
        }
        BuiltinOp::IntIsEqual | BuiltinOp::IntIsGreater | BuiltinOp::IntIsLess => {
            let a = int_of(r0, "target")?;
            let b = int_of(formal_ref("other")?, "argument")?;
            let v = match op {
                BuiltinOp::IntIsEqual => a == b,
                BuiltinOp::IntIsGreater => a > b,
                _ => a < b,
            };
            make_basic(state, ir, p, ir.boolean_class, Value::Bool(v)).map(|(s, r)| (s, Some(r)))
        }
        BuiltinOp::BoolNegated => {
            let a = bool_of(r0, "target")?;
            make_basic(state, ir, p, ir.boolean_class, Value::Bool(!a)).map(|(s, r)| (s, Some(r)))
        }
        BuiltinOp::BoolConjuncted | BuiltinOp::BoolDisjuncted | BuiltinOp::BoolIsEqual => {
            let a = bool_of(r0, "target")?;
            let b = bool_of(formal_ref("other")?, "argument")?;
            let v = match op {
                BuiltinOp::BoolConjuncted => a && b,
                BuiltinOp::BoolDisjuncted => a || b,
                _ => a == b,
            };
            make_basic(state, ir, p, ir.boolean_class, Value::Bool(v)).map(|(s, r)| (s, Some(r)))
        }
        BuiltinOp::CharIsEqual => {
            let a = char_of(r0, "target")?;
            let b = char_of(formal_ref("other")?, "argument")?;
            make_basic(state, ir, p, ir.boolean_class, Value::Bool(a == b))
                .map(|(s, r)| (s, Some(r)))
        }
        BuiltinOp::ArrayMake => {
            let n = int_of(formal_ref("n")?, "array size")?;
            if n < 0 {
                return Err(format!("array size {n} is negative"));
            }
            let obj = state.ref_obj(r0).map_err(|e| e.to_string())?.clone();
            let mut updated = obj;
            updated.cells = Some(vec![Value::VOID; n as usize]);
            let s = state.update_ref(r0, updated).map_err(|e| e.to_string())?;
            Ok((s, None))
        }
        BuiltinOp::ArrayItem => {
            let i = int_of(formal_ref("i")?, "array index")?;
            let obj = state.ref_obj(r0).map_err(|e| e.to_string())?;
            let cells = obj.cells.as_ref().ok_or("array has no cells")?;
            let cell = cell_at(cells, i)?;
            match cell {
                Value::Ref(r) => Ok((state.clone(), Some(r))),
                other => Err(format!("array cell holds {other}, not a reference")),
            }
        }
        BuiltinOp::ArrayPut => {
            let v = formal_ref("v")?;
            let i = int_of(formal_ref("i")?, "array index")?;
            let obj = state.ref_obj(r0).map_err(|e| e.to_string())?.clone();
            let mut updated = obj;
            {
                let cells = updated.cells.as_mut().ok_or("array has no cells")?;
                cell_at(cells, i)?;
                cells[(i - 1) as usize] = Value::Ref(v);
            }
            let s = state.update_ref(r0, updated).map_err(|e| e.to_string())?;
            Ok((s, None))
        }
        BuiltinOp::ArrayCount => {
            let obj = state.ref_obj(r0).map_err(|e| e.to_string())?;
            let n = obj.cells.as_ref().ok_or("array has no cells")?.len() as i64;
            make_basic(state, ir, p, ir.integer_class, Value::Int(n)).map(|(s, r)| (s, Some(r)))
        }
    }
}

/// Array indexing is 1-based.
fn cell_at(cells: &[Value], i: i64) -> Result<Value, String> {
    if i < 1 || i as usize > cells.len() {
        return Err(format!("array index {i} out of range 1..{}", cells.len()));
    }
    Ok(cells[(i - 1) as usize])
}

fn make_basic(
    state: &State,
    ir: &ProgramIR,
    p: Proc,
    class: crate::frontend::ir::ClassId,
    item: Value,
) -> Result<(State, Ref), String> {
    let (state, obj) = state.new_obj(ir, class);
    let obj_id = obj.id;
    let obj = obj.set_att_val("item", item).map_err(|e| e.to_string())?;
    let state = state.add_obj(p, obj).map_err(|e| e.to_string())?;
    let r = state.ref_of(obj_id).map_err(|e| e.to_string())?;
    Ok((state, r))
}
