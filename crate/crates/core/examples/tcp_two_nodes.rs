//! Two nodes over TCP on localhost, each in its own thread.
//!
//! A real deployment starts one `bpmf` process per node with a shared
//! hostfile; this example wires the same pieces together in one process.

use bpmf::data::{build_ratings, generate_synthetic, split_stream, split_train_test, synthetic_stream};
use bpmf::dist::cluster::{plan_topology, run_node};
use bpmf::dist::exchange::DEFAULT_BUFFER_CAPACITY;
use bpmf::dist::partition::WorkloadModel;
use bpmf::dist::transport::connect_mesh_with_listener;
use bpmf::dist::wire::Handshake;
use bpmf::sampler::SamplerConfig;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(100, 80, 3, 0.25, 0.2, &mut synthetic_stream(1));
    let (train, test) = split_train_test(&data.triplets, 0.2, &mut split_stream(1));
    let train = build_ratings(&train, data.m, data.n)?;
    let test = test.points;
    let config = SamplerConfig { iterations: 8, burn_in: 2, alpha: 25.0, ..SamplerConfig::new(4) };
    let topo = Arc::new(plan_topology(&train, &test, 2, &WorkloadModel::for_k(config.k), true)?);

    let listeners = [TcpListener::bind("127.0.0.1:0")?, TcpListener::bind("127.0.0.1:0")?];
    let addrs: Vec<String> = listeners.iter().map(|l| l.local_addr().map(|a| a.to_string())).collect::<Result<_, _>>()?;
    let hello = Handshake::new(2, config.k, config.seed);
    let outcomes = thread::scope(|s| {
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(id, listener)| {
                let (addrs, topo, config, train, test) = (&addrs, topo.clone(), config.clone(), &train, &test);
                s.spawn(move || -> Result<_, Box<dyn std::error::Error + Send + Sync>> {
                    let t = connect_mesh_with_listener(id, listener, addrs, &hello, Duration::from_secs(10))?;
                    Ok(run_node(config, train, test, topo, Box::new(t), DEFAULT_BUFFER_CAPACITY)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("node thread")).collect::<Vec<_>>()
    });
    for o in outcomes {
        let o = o.map_err(|e| e.to_string())?;
        let last = o.report.history.last().expect("iterations ran");
        println!("node {}: {} bytes sent, final rmse_avg {:.4}", o.node, o.stats.bytes_sent, last.rmse_avg);
    }
    Ok(())
}
