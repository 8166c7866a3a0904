#![allow(dead_code)]

use std::sync::Arc;

use mpidesk_core::adapter::AdapterInstance;
use mpidesk_core::backends::NativeBinding;
use mpidesk_core::engine::EngineSession;
use mpidesk_core::transport::{run_ranks, NetworkFabric, RankId};
use mpidesk_core::Result;

pub const BACKENDS: [&str; 2] = ["index", "ref"];

pub fn fabric(n: u32) -> Arc<NetworkFabric> {
    Arc::new(NetworkFabric::new(n).unwrap())
}

pub fn on_native<T, F>(backend: &str, n: u32, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RankId, &mut NativeBinding) -> Result<T> + Sync,
{
    run_ranks(&fabric(n), |rank, f| body(rank, &mut NativeBinding::new(backend, f, rank)?))
}

pub fn on_adapter<T, F>(backend: &str, n: u32, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RankId, &mut AdapterInstance) -> Result<T> + Sync,
{
    run_ranks(&fabric(n), |rank, f| body(rank, &mut AdapterInstance::bind_backend(backend, f, rank)?))
}

pub fn on_engine<T, F>(backend: &str, n: u32, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RankId, &mut EngineSession) -> Result<T> + Sync,
{
    run_ranks(&fabric(n), |rank, f| body(rank, &mut EngineSession::launch(backend, f, rank)?))
}

pub fn i32s(v: &[i32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn from_i32s(b: &[u8]) -> Vec<i32> {
    b.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn f64s(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn from_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}
