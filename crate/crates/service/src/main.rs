use std::net::SocketAddr;

use clap::Parser;

#[derive(Parser)]
#[command(name = "opp-server", version, about = "Serve the OPP engine over HTTP/JSON")]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let args = Args::parse();
    let listener = match tokio::net::TcpListener::bind(args.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.listen);
            return std::process::ExitCode::from(5);
        }
    };
    println!("listening on {}", listener.local_addr().expect("bound socket"));
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match opp_service::serve(listener, shutdown).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(5)
        }
    }
}
