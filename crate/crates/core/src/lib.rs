//! Onboard software for an autonomous balloon-popping multirotor: balloon
//! detection, balloon and height filtering, time-optimal trajectories and the
//! mission state machine.

pub mod balloon_filter;
pub mod geometry;
pub mod height_filter;
pub mod mission;
pub mod perception;
pub mod trajectory;
