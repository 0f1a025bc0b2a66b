//! Dual-gripper collaborative affordance learning.

pub mod geometry;
pub mod harness;
pub mod sim;
pub mod datagen;
pub mod perception;
mod par;
pub mod tensor;
pub mod training;
