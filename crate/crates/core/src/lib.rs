//! Coverage-guided API fuzzing by stitching typed code blocks into testcases.
//!
//! A [`Specification`](spec::Specification) lists object types and code
//! blocks. The engine assembles blocks into well-formed
//! [`Testcase`](testcase::Testcase)s, runs them through a
//! [`Backend`](outcome::Backend), and keeps whatever reaches new coverage or
//! gets further before bailing. Crashes are deduplicated, minimized, and can
//! be exported as standalone native reproducers.

pub mod codegen;
pub mod engine;
pub mod mutation;
pub mod outcome;
pub mod spec;
pub mod testcase;
pub mod typestate;
pub mod vm;
pub mod wire;

pub use engine::{run_campaign, Budget, CampaignConfig, CampaignResult, CampaignStats, CrashReport};
pub use mutation::{Mutation, MutationConfig, MutationContext, MutationError, Mutator, Operator};
pub use outcome::{Backend, BackendError, Coverage, DedupKey, Outcome, OutcomeKind};
pub use spec::{load_spec, parse_spec, BlockId, Specification, TypeId};
pub use testcase::{validate, BlockInstance, ParamKind, ParamRecord, ParamValue, Testcase};
pub use vm::VirtualBackend;
