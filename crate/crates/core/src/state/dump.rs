//! Simplified state description.
//!
//! Four labeled blocks — locks, objects, once status, environments — one
//! line per processor, rendered as stable plain text. Basic objects show
//! their value, arrays show their cells (inlining nested arrays), other
//! objects list their non-void attribute values in declaration order.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::frontend::ir::ProgramIR;

use super::ids::{Proc, Ref, Value};
use super::regions::LockStack;
use super::state::State;

pub fn dump_state(state: &State, ir: &ProgramIR) -> String {
    let mut out = String::new();
    let procs: Vec<Proc> = state.procs().iter().copied().collect();

    out.push_str("locks:\n");
    for &p in &procs {
        let obtained = render_stack(state.regions.obtained_rq_locks(p).expect("known proc"));
        let retrieved_rq = render_stack(state.regions.retrieved_rq_locks(p).expect("known proc"));
        let retrieved_cs = render_stack(state.regions.retrieved_cs_locks(p).expect("known proc"));
        let locked = if state.rq_locked(p).expect("known proc") {
            "locked"
        } else {
            "unlocked"
        };
        let passed = if state.locks_passed(p).expect("known proc") {
            " passed"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  {p}: obtained_rq={obtained} retrieved_rq={retrieved_rq} retrieved_cs={retrieved_cs} rq={locked}{passed}"
        );
    }

    out.push_str("objects:\n");
    for &p in &procs {
        let mut entries: Vec<(Ref, String)> = Vec::new();
        for &obj_id in state.regions.handled_objs(p).expect("known proc") {
            let r = state.ref_of(obj_id).expect("object on heap");
            entries.push((r, render_object(state, ir, r)));
        }
        entries.sort_by_key(|(r, _)| *r);
        let rendered: Vec<String> = entries
            .into_iter()
            .map(|(r, o)| format!("{r}={o}"))
            .collect();
        write_entry_line(&mut out, p, &rendered.join(", "));
    }

    out.push_str("once:\n");
    let once = state.heap.once_table();
    for &p in &procs {
        let mut entries: Vec<String> = Vec::new();
        for ((q, f), result) in &once.per_proc {
            if *q == p {
                entries.push(render_once_entry(ir, *f, *result));
            }
        }
        if !entries.is_empty() {
            let _ = writeln!(out, "  {p}: {}", entries.join(", "));
        }
    }
    if !once.all_procs.is_empty() {
        let entries: Vec<String> = once
            .all_procs
            .iter()
            .map(|(f, result)| render_once_entry(ir, *f, *result))
            .collect();
        let _ = writeln!(out, "  all: {}", entries.join(", "));
    }

    out.push_str("environments:\n");
    for &p in &procs {
        let frames: Vec<String> = state.envs(p).iter().map(render_env).collect();
        write_entry_line(&mut out, p, &frames.join(" / "));
    }
    out
}

fn write_entry_line(out: &mut String, p: Proc, content: &str) {
    if content.is_empty() {
        let _ = writeln!(out, "  {p}:");
    } else {
        let _ = writeln!(out, "  {p}: {content}");
    }
}

fn render_stack(stack: &LockStack) -> String {
    let sets: Vec<String> = stack.iter().map(render_proc_set).collect();
    format!("[{}]", sets.join(","))
}

fn render_proc_set(set: &BTreeSet<Proc>) -> String {
    let members: Vec<String> = set.iter().map(|p| p.to_string()).collect();
    format!("{{{}}}", members.join(","))
}

fn render_once_entry(
    ir: &ProgramIR,
    f: crate::frontend::ir::FeatureId,
    result: Option<Ref>,
) -> String {
    match result {
        Some(r) => format!("{}={r}", ir.feature_label(f)),
        None => ir.feature_label(f),
    }
}

fn render_env(env: &super::store::Env) -> String {
    // Alphabetical, with Current and Result at the end.
    let mut names: Vec<&str> = env.names().collect();
    names.sort_by_key(|n| match *n {
        "Current" => (1, *n),
        "Result" => (2, *n),
        other => (0, other),
    });
    let entries: Vec<String> = names
        .into_iter()
        .map(|n| format!("{n}={}", env.value(n).expect("name present")))
        .collect();
    format!("{{{}}}", entries.join(", "))
}

/// Renders one object: `o7(42)` for basic values, `o3[r1, r2]` for arrays
/// (nested arrays inlined), `o5(id=r6)` for other objects with their
/// non-void attributes.
pub fn render_object(state: &State, ir: &ProgramIR, r: Ref) -> String {
    let obj = state.ref_obj(r).expect("known ref");
    let mut rendered = format!("{}", obj.id);
    if let Some(cells) = &obj.cells {
        let mut seen = BTreeSet::new();
        rendered.push_str(&render_cells(state, cells, &mut seen));
        return rendered;
    }
    let class = ir.class(obj.class_type);
    if class.is_exp && obj.att_val.contains_key("item") {
        let item = obj.att_val("item").expect("item attribute");
        let _ = write!(rendered, "({item})");
        return rendered;
    }
    let attrs: Vec<String> = ir
        .attribute_names(obj.class_type)
        .into_iter()
        .filter_map(|name| {
            let v = obj.att_val(name).expect("declared attribute");
            if v == Value::VOID {
                None
            } else {
                Some(format!("{name}={v}"))
            }
        })
        .collect();
    if !attrs.is_empty() {
        let _ = write!(rendered, "({})", attrs.join(", "));
    }
    rendered
}

fn render_cells(state: &State, cells: &[Value], seen: &mut BTreeSet<Ref>) -> String {
    let rendered: Vec<String> = cells
        .iter()
        .map(|cell| match cell {
            Value::Ref(r) if !r.is_void() => {
                let obj = state.ref_obj(*r).expect("known ref");
                match &obj.cells {
                    Some(inner) if seen.insert(*r) => {
                        let s = render_cells(state, inner, seen);
                        seen.remove(r);
                        s
                    }
                    _ => r.to_string(),
                }
            }
            other => other.to_string(),
        })
        .collect();
    format!("[{}]", rendered.join(", "))
}
