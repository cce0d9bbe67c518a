fn main() {
    std::process::exit(sarcasm_tts::cli::dispatch(std::env::args_os()));
}
