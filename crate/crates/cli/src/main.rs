use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cache_dir = std::env::var_os(dysbench_cli::config::CACHE_DIR_ENV).map(Into::into);
    let code = dysbench_cli::run(
        std::env::args_os(),
        cache_dir,
        &mut io::stdout(),
        &mut io::stderr(),
    );
    std::process::exit(code);
}
