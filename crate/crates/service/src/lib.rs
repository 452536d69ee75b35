//! HTTP service and command line for the forensic video search stack.

pub mod api;
pub mod app;
pub mod cli;
pub mod clients;
pub mod config;
pub mod corpus;
pub mod jobs;
pub mod mock;
pub mod registry;
pub mod review;
