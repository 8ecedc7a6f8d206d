//! Starts the control service, submits a scenario over HTTP, steers it,
//! and follows its progress.
//!
//! ```text
//! cargo run --example control_server
//! ```

use std::time::Duration;

use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}/v1", listener.local_addr()?);
    tokio::spawn(seisnet::control::serve_on(listener));
    println!("serving {base}");

    let mut scenario: Value =
        serde_json::from_str(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.json"))?)?;
    scenario["control"] = json!({ "round_delay_ms": 1, "snapshot_every": 25 });
    let http = reqwest::Client::new();
    let created: Value = http.post(format!("{base}/runs")).json(&scenario).send().await?.json().await?;
    let id = created["run_id"].as_str().ok_or("no run id")?.to_string();

    let mut steered = false;
    loop {
        let snap: Value = http.get(format!("{base}/runs/{id}/snapshot")).send().await?.json().await?;
        let round = snap["round"].as_u64().unwrap_or(0);
        println!("seq {:>4} round {:>5} {} lambda {}", snap["seq"], round, snap["status"], snap["params"]["lambda"]);
        if !steered && round >= 100 {
            let lambda = snap["params"]["lambda"].as_f64().unwrap_or(1.0) * 2.0;
            let r = http.post(format!("{base}/runs/{id}/command")).json(&json!({ "kind": "SET_LAMBDA", "value": lambda })).send().await?;
            println!("SET_LAMBDA {lambda:.1}: {}", r.status());
            steered = true;
        }
        if matches!(snap["status"].as_str(), Some("FINISHED" | "FAILED")) {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    let stats: Value = http.get(format!("{base}/runs/{id}/stats")).send().await?.json().await?;
    println!("network: {}", stats["network"]["stats"]);
    Ok(())
}
