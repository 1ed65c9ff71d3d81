//! Digraph homomorphism with list constraints, for targets admitting a weak
//! near-unanimity polymorphism: consistency preprocessing, the non-minority
//! reduction, the Maltsev phase, an exact oracle and a fuzzing harness.

pub mod chom;
pub mod consistency;
pub mod digraph;
pub mod harness;
pub mod minority;
pub mod oracle;
pub mod pipeline;
pub mod polymorphism;
pub mod reduction;
pub mod valueset;

pub use consistency::{EmptyListSignal, ListAssignment};
pub use digraph::{Digraph, DigraphError};
pub use polymorphism::{PolymorphismTable, PropertyReport, SearchOutcome};
pub use valueset::ValueSet;
