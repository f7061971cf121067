#ifndef TABLEDUMP_H
#define TABLEDUMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_INVALID_ARGUMENT = 1,
  TD_STATUS_IO = 2,
  /**
   * A dump file is damaged or not a dump file.
   */
  TD_STATUS_CORRUPT = 3,
  TD_STATUS_BACKEND = 4,
  TD_STATUS_MALFORMED_PLAN = 5,
  /**
   * Dump files for the table already exist.
   */
  TD_STATUS_FILE_EXISTS = 6,
  /**
   * A selected column has a type that cannot be dumped.
   */
  TD_STATUS_UNSUPPORTED_TYPE = 7,
  /**
   * The operation finished but some records or tables failed.
   */
  TD_STATUS_PARTIAL_FAILURE = 8,
  TD_STATUS_PANIC = 99,
} TdStatus;

typedef enum TdValueKind {
  TD_VALUE_KIND_NULL = 0,
  TD_VALUE_KIND_INT = 1,
  TD_VALUE_KIND_FLOAT = 2,
  TD_VALUE_KIND_TEXT = 3,
  TD_VALUE_KIND_BYTES = 4,
} TdValueKind;

/**
 * A reference database, opened from or saved to a snapshot file.
 */
typedef struct TdDatabase TdDatabase;

/**
 * The decoded contents of one dump file.
 */
typedef struct TdDumpFile TdDumpFile;

/**
 * Totals for a dump call.
 */
typedef struct TdDumpSummary {
  uint64_t tables_dumped;
  uint64_t tables_failed;
  uint64_t files_written;
  uint64_t records_dumped;
} TdDumpSummary;

/**
 * Totals for a load call.
 */
typedef struct TdLoadSummary {
  uint64_t files_loaded;
  uint64_t files_failed;
  uint64_t records_inserted;
  uint64_t records_failed;
} TdLoadSummary;

/**
 * One field of a record. For text and bytes, `data`/`len` point into the
 * owning [`TdDumpFile`]; text is UTF-8 and not NUL-terminated.
 */
typedef struct TdField {
  enum TdValueKind kind;
  int64_t int_value;
  double float_value;
  const uint8_t *data;
  size_t len;
} TdField;

typedef struct TdSalvageReport {
  uint64_t records_recovered;
  uint64_t bytes_skipped;
  bool header_found;
  bool end_frame_found;
  /**
   * Meaningful only when `end_frame_found`.
   */
  uint64_t expected_records;
  uint64_t crc_rejections;
} TdSalvageReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *td_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *td_last_error(void);

/**
 * Opens a database snapshot file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum TdStatus td_db_open(const char *path, struct TdDatabase **out);

/**
 * Creates a database by running an SQL script (CREATE TABLE, INSERT, ...).
 *
 * # Safety
 * `script` must be a valid C string and `out` a valid pointer.
 */
enum TdStatus td_db_from_script(const char *script, struct TdDatabase **out);

/**
 * Writes the database to a snapshot file.
 *
 * # Safety
 * `db` must come from this library; `path` must be a valid C string.
 */
enum TdStatus td_db_save(const struct TdDatabase *db, const char *path);

/**
 * Number of committed rows in `table`.
 *
 * # Safety
 * `db` must come from this library; `table` must be a valid C string and
 * `out` a valid pointer.
 */
enum TdStatus td_db_row_count(const struct TdDatabase *db, const char *table, uint64_t *out);

/**
 * Releases a database handle. NULL is ignored.
 *
 * # Safety
 * `db` must come from this library and not be used afterwards.
 */
void td_db_free(struct TdDatabase *db);

/**
 * Dumps the tables of a plan (text in the plan file format) into
 * `out_dir`, `chunk_size` records per file (0 means the default). Returns
 * `TD_STATUS_PARTIAL_FAILURE` when `keep_going` is set and some table
 * failed; the message names the first failure. `summary` may be NULL.
 *
 * # Safety
 * `db` must come from this library; strings must be valid C strings.
 */
enum TdStatus td_dump(const struct TdDatabase *db,
                      const char *plan,
                      const char *out_dir,
                      uint64_t chunk_size,
                      bool overwrite,
                      bool keep_going,
                      struct TdDumpSummary *summary);

/**
 * Loads `count` dump files with `jobs` workers. `commit_batch` selects the
 * commit policy: 0 commits once per file, 1 per record, n every n records.
 * Returns `TD_STATUS_PARTIAL_FAILURE` if any record or file failed; the
 * message describes the first file-level error, if any. `summary` may be
 * NULL.
 *
 * # Safety
 * `db` must come from this library; `paths` must point to `count` valid C
 * strings.
 */
enum TdStatus td_load(const struct TdDatabase *db,
                      const char *const *paths,
                      size_t count,
                      size_t jobs,
                      uint64_t commit_batch,
                      bool salvage,
                      struct TdLoadSummary *summary);

/**
 * Reads a dump file completely. In strict mode any damage fails with
 * `TD_STATUS_CORRUPT`; in salvage mode the intact records are returned and
 * only a missing header is an error.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum TdStatus td_file_open(const char *path, bool salvage, struct TdDumpFile **out);

/**
 * Table name from the header; owned by `file`. NULL if `file` is NULL.
 *
 * # Safety
 * `file` must come from this library.
 */
const char *td_file_table_name(const struct TdDumpFile *file);

/**
 * Insert statement from the header; owned by `file`. NULL if `file` is NULL.
 *
 * # Safety
 * `file` must come from this library.
 */
const char *td_file_insert_sql(const struct TdDumpFile *file);

/**
 * # Safety
 * `file` must come from this library or be NULL (returns 0).
 */
uint32_t td_file_chunk_index(const struct TdDumpFile *file);

/**
 * # Safety
 * `file` must come from this library or be NULL (returns 0).
 */
uint16_t td_file_column_count(const struct TdDumpFile *file);

/**
 * # Safety
 * `file` must come from this library or be NULL (returns 0).
 */
uint64_t td_file_record_count(const struct TdDumpFile *file);

/**
 * Field `column` of record `record` (both 0-based). Pointers in `out` stay
 * valid until `file` is freed.
 *
 * # Safety
 * `file` must come from this library and `out` be a valid pointer.
 */
enum TdStatus td_file_field(const struct TdDumpFile *file,
                            uint64_t record,
                            uint16_t column,
                            struct TdField *out);

/**
 * Salvage statistics for a file opened in salvage mode.
 *
 * # Safety
 * `file` must come from this library and `out` be a valid pointer.
 */
enum TdStatus td_file_salvage_report(const struct TdDumpFile *file, struct TdSalvageReport *out);

/**
 * Releases a dump file handle. NULL is ignored.
 *
 * # Safety
 * `file` must come from this library and not be used afterwards.
 */
void td_file_free(struct TdDumpFile *file);

/**
 * Strictly reads a dump file: `TD_STATUS_OK` if intact, otherwise
 * `TD_STATUS_CORRUPT` (or `TD_STATUS_IO`). `records` may be NULL.
 *
 * # Safety
 * `path` must be a valid C string.
 */
enum TdStatus td_verify(const char *path, uint64_t *records);

/**
 * Rewrites the intact records of `path` as a fresh dump file at
 * `out_path`. Fails with `TD_STATUS_CORRUPT` (writing nothing) when no
 * header survived. `report` may be NULL.
 *
 * # Safety
 * Strings must be valid C strings.
 */
enum TdStatus td_salvage(const char *path, const char *out_path, struct TdSalvageReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABLEDUMP_H */
