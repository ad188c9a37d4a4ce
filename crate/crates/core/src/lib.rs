//! Morley nonconforming finite elements for the singularly perturbed fourth-order
//! problem `eps^2 Δ²u - Δu = f` on triangle meshes, with decoupled solvers.

pub mod analysis;
pub mod assembly;
pub mod linalg;
pub mod mesh;
pub mod methods;
pub mod quadrature;
pub mod spaces;
