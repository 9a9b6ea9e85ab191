#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::mpsc;
use std::thread;

use axum::Router;

/// Serves `app` on an ephemeral localhost port from a background runtime.
/// The server lives until the test process exits.
pub fn spawn_server(app: Router) -> SocketAddr {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                .await
                .expect("bind");
            tx.send(listener.local_addr().expect("addr"))
                .expect("report addr");
            axum::serve(listener, app).await.expect("serve");
        });
    });
    rx.recv().expect("server started")
}
