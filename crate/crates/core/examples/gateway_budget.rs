//! Shows retries on transient failures, immediate failure on client errors,
//! and refusal once the call budget is spent.
//!
//!     cargo run --example gateway_budget

use lpo::gateway::mock::MockChat;
use lpo::gateway::{BackendFailure, Budget, ChatRequest, Gateway, RetryPolicy};
use std::time::Duration;

fn main() {
    let flaky = MockChat::constant("ok").with_failures(vec![
        BackendFailure::Status { code: 503, body: "busy".into() },
        BackendFailure::Timeout("slow".into()),
    ]);
    let gateway = Gateway::new(flaky).with_retry(RetryPolicy {
        max_attempts: 3,
        backoff_base: Duration::from_millis(10),
    });
    let budget = Budget::new(2, 1_000).expect("positive limits");
    let req = ChatRequest::new("hello");

    let reply = gateway.chat(&req, &budget).expect("third attempt succeeds");
    println!("reply {:?} after {} attempts, {} call charged", reply.text, gateway.attempts(), budget.snapshot().calls);

    gateway.chat(&req, &budget).expect("second call fits the budget");
    match gateway.chat(&req, &budget) {
        Err(e) => println!("third call refused: {e}"),
        Ok(_) => unreachable!("budget allows two calls"),
    }

    let strict = Gateway::new(MockChat::constant("never").with_failures(vec![BackendFailure::Status {
        code: 400,
        body: "bad request".into(),
    }]));
    let err = strict.chat(&req, &Budget::unlimited()).unwrap_err();
    println!("client error, {} attempt: {err}", strict.attempts());
    let (calls, tokens) = lpo::gateway::usage_report(&budget);
    println!("usage: {calls} calls, {tokens} tokens");
}
