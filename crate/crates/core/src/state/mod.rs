//! Runtime state: objects, references, processors, regions with the
//! two-lock model, heap with once status, and the store of environment
//! stacks, behind a facade with consistency checking.
//!
//! All values are persistent: commands return new values and never mutate
//! the receiver, so exploration can snapshot configurations by cloning.

pub mod dump;
pub mod error;
pub mod heap;
pub mod ids;
pub mod regions;
#[allow(clippy::module_inception)]
pub mod state;
pub mod store;

pub use dump::dump_state;
pub use error::{StateError, StateResult};
pub use heap::{Heap, Obj};
pub use ids::{ObjId, Proc, Ref, Value};
pub use regions::Regions;
pub use state::State;
pub use store::{Env, Store};
