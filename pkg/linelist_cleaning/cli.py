"""linelist command: batch cleaning, review of queued cells, reports, synthetic corpora and
the geocode cache

Exit codes are a stable contract for scripts: 0 success, 1 error, 2 success with review
items still pending.
"""
import argparse
import json
import logging
import os
import sys

from linelist_cleaning.address_locator import (
    Gazetteer, GeocodeCache, OfflineGeocoder, build_geocoder, clean_address_cell, geocode
)
from linelist_cleaning.core_model import (
    Action, CleanRecord, GeocodingError, YearContext, ingest_csv, load_params, read_mapping
)
from linelist_cleaning.corpus_synth import generate_corpus, write_corpus
from linelist_cleaning.date_engine import export_rule_catalog
from linelist_cleaning.pipeline_audit import (
    AuditLog, LineListCleaner, Resolution, append_resolution, attach_resolutions,
    load_keywords, load_review_items, render_summary_text, revalidate, summarize,
    write_clean_csv, write_review_items, write_summary
)
from linelist_cleaning.utils import validate_paths, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PENDING = 2

OUTPUT_FILES = {
    "cleaned": "cleaned.csv",
    "audit": "audit.jsonl",
    "summary_json": "summary.json",
    "summary_text": "summary.txt",
    "pending": "review_pending.jsonl",
    "quarantine": "quarantine.jsonl",
}
# used when geocoding is on and params leave geocoder.cache_path empty
DEFAULT_CACHE_FILE = "geocode_cache.json"

REVIEW_HELP = "<n> accept candidate n, v <value> type a value, d delete, s skip, q quit"


class UsageError(ValueError):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    """Raises on usage errors so they share the exit code of every other error"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = _ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="log debug messages")
    common.add_argument("--quiet", action="store_true",
                        help="log errors only and hide progress bars")

    parser = _ArgumentParser(
        prog="linelist", description="Rule-based cleaning of surveillance line-lists")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    clean = subparsers.add_parser("clean", parents=[common], help="clean a line-list CSV")
    clean.add_argument("--input", required=True, help="raw line-list CSV")
    clean.add_argument("--output-dir", required=True)
    clean.add_argument("--config", help="params.toml merged over the packaged defaults")
    clean.add_argument("--year", type=int, required=True, help="surveillance year")
    clean.add_argument("--workers", type=int)
    clean.add_argument("--resolutions-file",
                       help="review sidecar whose decisions are replayed before writing")
    clean.add_argument("--offline-geocoder", action="store_true",
                       help="geocode with the packaged stub table")

    review = subparsers.add_parser("review", parents=[common],
                                   help="resolve queued cells at the terminal")
    review.add_argument("--sidecar", required=True, help="review_pending.jsonl of a clean run")
    review.add_argument("--config")
    review.add_argument("--year", type=int, required=True)
    review.add_argument("--script", help="file of review commands, one per line")

    report = subparsers.add_parser("report", parents=[common], help="summarize an audit log")
    report.add_argument("--audit", required=True)
    report.add_argument("--year", type=int)
    report.add_argument("--json", action="store_true", help="print the summary as JSON")
    report.add_argument("--rule-catalog", help="also write the date rule catalog here")

    synth = subparsers.add_parser("synth", parents=[common],
                                  help="generate a synthetic line-list with ground truth")
    synth.add_argument("--n", type=int, required=True, help="number of rows")
    synth.add_argument("--year", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output-dir", required=True)
    synth.add_argument("--weights-json", help="JSON object of renderer name -> weight")
    synth.add_argument("--workers", type=int, default=1)

    cache = subparsers.add_parser("geocode-cache", parents=[common],
                                  help="list, clear or pre-warm the geocode cache")
    cache.add_argument("action", choices=["list", "clear", "warm"])
    cache.add_argument("--cache", required=True, help="geocode cache JSON file")
    cache.add_argument("--names", help="free-text place names to warm, one per line")
    cache.add_argument("--stub", help="offline geocoder table used for warming")
    cache.add_argument("--config")
    return parser


def check_args(args):
    """Rejects flag combinations argparse cannot express
    Raises:
        UsageError:
            on conflicting or incomplete flags
    """
    if args.verbose and args.quiet:
        raise UsageError("--verbose and --quiet cannot be combined")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        raise UsageError("--workers must be at least 1")
    if args.command == "synth" and args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.command == "geocode-cache":
        if args.action == "warm" and not args.names:
            raise UsageError("geocode-cache warm needs --names")
        if args.action != "warm" and (args.names or args.stub):
            raise UsageError("--names and --stub only apply to geocode-cache warm")


def configure_logging(args):
    level = logging.WARNING
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def output_paths(output_dir):
    return {name: os.path.join(output_dir, filename) for name, filename in OUTPUT_FILES.items()}


def cmd_clean(args):
    overrides = {"progress": not args.quiet}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.offline_geocoder:
        overrides["geocoder"] = {"enabled": True, "offline": True}
    params = load_params(args.config, **overrides)
    ctx = YearContext(args.year, params["plausibility_window_days"])
    if args.resolutions_file:
        validate_paths(args.resolutions_file)

    records, ingest_verdicts = ingest_csv(args.input, read_mapping(params))
    geocoder = build_geocoder(params["geocoder"])
    cache = None
    if geocoder is not None:
        cache_path = params["geocoder"].get("cache_path") or os.path.join(
            args.output_dir, DEFAULT_CACHE_FILE)
        cache = GeocodeCache.load(cache_path)
    cleaner = LineListCleaner(params, ctx, geocoder=geocoder, cache=cache)
    cleaned, audit, items = cleaner.run(records, ingest_verdicts)

    if args.resolutions_file:
        attached = attach_resolutions(items, load_review_items(args.resolutions_file))
        applied = cleaner.apply_resolutions(items, cleaned, audit)
        logger.info("Replayed %d decisions, %d applied", attached, len(applied))
    pending = [item for item in items if not item.is_terminal()]

    os.makedirs(args.output_dir, exist_ok=True)
    paths = output_paths(args.output_dir)
    write_clean_csv(paths["cleaned"], cleaned)
    audit.write_jsonl(paths["audit"])
    write_summary(summarize(audit), paths["summary_json"], paths["summary_text"])
    # decided items included; the sidecar doubles as the next --resolutions-file
    write_review_items(paths["pending"], items)
    write_jsonl(paths["quarantine"], (verdict.to_dict() for verdict in audit.ingest_verdicts))
    if cache is not None:
        cache.save()

    print("Cleaned {} rows into {}; {} cells pending review".format(
        len(cleaned), args.output_dir, len(pending)))
    return EXIT_PENDING if pending else EXIT_OK


def _show_item(item, position, total, out):
    verdict = item.verdict
    print("", file=out)
    print("[{}/{}] row {}, {}: {!r}".format(position, total, verdict.row_index,
                                           verdict.role.source_header, verdict.before),
          file=out)
    print("  rules: {}".format(" > ".join(verdict.rule_chain) or "-"), file=out)
    if verdict.action != Action.REVIEW_QUEUED:
        # lossy cells arrive already deleted or imputed; d keeps that outcome
        print("  outcome: {} {}".format(verdict.action.value, verdict.after).rstrip(), file=out)
    if verdict.note:
        print("  note: {}".format(verdict.note), file=out)
    for number, candidate in enumerate(item.candidates, start=1):
        print("  {}) {}".format(number, candidate), file=out)
    print("  {}".format(REVIEW_HELP), file=out)


def _read_command(stream):
    """Next command line, None at end of input"""
    if stream is None:
        try:
            return input("> ")
        except EOFError:
            return None
    line = stream.readline()
    return line.rstrip("\r\n") if line else None


def review_session(items, sidecar, validate, stream=None, out=None):
    """Walks the pending items, appending every decision to the sidecar

    Args:
        items (list[ReviewItem]):
            items read from the sidecar
        sidecar (str):
            path decisions are appended to
        validate (callable):
            validate(item) raises ValueError when the chosen value does not parse
        stream (file):
            command source, None to prompt on the terminal
        out (file):
            where items and messages are printed, defaults to stdout
    Returns:
        int:
            number of decisions recorded
    """
    out = out or sys.stdout
    pending = [item for item in items if not item.is_terminal()]
    decided = 0
    for position, item in enumerate(pending, start=1):
        _show_item(item, position, len(pending), out)
        while True:
            command = _read_command(stream)
            if command is None or command.strip() == "q":
                return decided
            command = command.strip()
            if command in ("", "s"):
                break
            try:
                if command == "d":
                    item.resolve(Resolution.DELETED)
                elif command.isdigit():
                    item.accept(int(command))
                    validate(item)
                elif command.startswith("v "):
                    item.resolve(Resolution.MANUAL_VALUE, command[2:].strip())
                    validate(item)
                else:
                    print("  {}".format(REVIEW_HELP), file=out)
                    continue
            except ValueError as err:
                if item.is_terminal():
                    item.reopen(str(err))
                print("  error: {}".format(err), file=out)
                continue
            append_resolution(sidecar, item)
            decided += 1
            break
    return decided


def cmd_review(args):
    validate_paths(args.sidecar)
    if args.script:
        validate_paths(args.script)
    elif not sys.stdin.isatty():
        print("error: review needs an interactive terminal; pass --script, or replay "
              "decisions with clean --resolutions-file", file=sys.stderr)
        return EXIT_ERROR

    params = load_params(args.config)
    ctx = YearContext(args.year, params["plausibility_window_days"])
    gazetteer = Gazetteer.load(params["gazetteer_path"])
    keywords = load_keywords(params)

    def validate(item):
        scratch = CleanRecord(item.verdict.row_index)
        revalidate(scratch, item.verdict, item.value, ctx, params, gazetteer, keywords)

    items = load_review_items(args.sidecar)
    if args.script:
        with open(args.script, "r", encoding="utf-8") as stream:
            decided = review_session(items, args.sidecar, validate, stream)
    else:
        decided = review_session(items, args.sidecar, validate)

    remaining = sum(not item.is_terminal() for item in items)
    print("{} decisions recorded, {} items pending".format(decided, remaining))
    return EXIT_PENDING if remaining else EXIT_OK


def cmd_report(args):
    validate_paths(args.audit)
    summary = summarize(AuditLog.read_jsonl(args.audit, year=args.year))
    if args.rule_catalog:
        export_rule_catalog(args.rule_catalog)
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(render_summary_text(summary), end="")
    return EXIT_OK


def cmd_synth(args):
    ctx = YearContext(args.year)
    weights = None
    if args.weights_json:
        validate_paths(args.weights_json)
        with open(args.weights_json, "r", encoding="utf-8") as f:
            weights = json.load(f)
    csv_text, truth_df = generate_corpus(args.n, ctx, args.seed, weights=weights,
                                         workers=args.workers)
    os.makedirs(args.output_dir, exist_ok=True)
    corpus_path, truth_path = write_corpus(args.output_dir, csv_text, truth_df)
    print("Wrote {} rows to {} and ground truth to {}".format(args.n, corpus_path, truth_path))
    return EXIT_OK


def warm_cache(names, cache, gazetteer, client, abbreviations=None):
    """Matches each name to the gazetteer and geocodes the matches into the cache

    Args:
        names (list[str]):
            free-text place names
        cache (GeocodeCache):
            cache to fill
        gazetteer (Gazetteer):
            gazetteer names are matched against
        client (OfflineGeocoder | HttpGeocoder):
            geocoder queried on cache misses
        abbreviations (dict):
            address abbreviation table
    Returns:
        int:
            number of names that now have cached coordinates
    Raises:
        GeocodingError:
            if the client times out or is refused
    """
    warmed = 0
    for name in names:
        _, location = clean_address_cell(name, gazetteer, abbreviations)
        if location is None:
            logger.warning("No gazetteer match for a name of %d characters", len(name))
            continue
        if geocode(location, client, cache).latitude is not None:
            warmed += 1
    return warmed


def cmd_geocode_cache(args):
    if args.action == "list":
        validate_paths(args.cache)
        for query, (latitude, longitude) in GeocodeCache.load(args.cache).items():
            print("{}\t{:.6f}\t{:.6f}".format(query, latitude, longitude))
        return EXIT_OK

    if args.action == "clear":
        if not os.path.exists(args.cache):
            logger.info("No cache at %s, nothing to clear", args.cache)
            return EXIT_OK
        cache = GeocodeCache.load(args.cache)
        n_entries = len(cache)
        cache.clear()
        cache.save()
        print("Cleared {} entries".format(n_entries))
        return EXIT_OK

    validate_paths(args.names)
    params = load_params(args.config)
    if args.stub:
        client = OfflineGeocoder.from_json(args.stub)
    else:
        client = build_geocoder(dict(params["geocoder"], enabled=True))
    with open(args.names, "r", encoding="utf-8") as f:
        names = [line.strip() for line in f if line.strip()]

    cache = GeocodeCache.load(args.cache)
    try:
        warmed = warm_cache(names, cache, Gazetteer.load(params["gazetteer_path"]), client,
                            params["address"]["abbreviations"])
    finally:
        cache.save()
    print("Warmed {} of {} names; the cache holds {} entries".format(
        warmed, len(names), len(cache)))
    return EXIT_OK


COMMANDS = {
    "clean": cmd_clean,
    "review": cmd_review,
    "report": cmd_report,
    "synth": cmd_synth,
    "geocode-cache": cmd_geocode_cache,
}


def main(argv=None):
    """Runs one linelist command
    Args:
        argv (list[str]):
            arguments without the program name, defaults to sys.argv[1:]
    Returns:
        int:
            exit status
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        check_args(args)
    except UsageError as err:
        print("error: {}".format(err), file=sys.stderr)
        return EXIT_ERROR
    configure_logging(args)

    try:
        return COMMANDS[args.command](args)
    except GeocodingError as err:
        print("error: geocoder failed: {}".format(err), file=sys.stderr)
    except (ValueError, OSError) as err:
        print("error: {}".format(err), file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
