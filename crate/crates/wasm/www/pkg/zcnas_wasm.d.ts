/* tslint:disable */
/* eslint-disable */

/**
 * Parameters, multiply-accumulates and isomer totals of one architecture.
 *
 * `space` is a preset name (`tiny`, `small`, `base`, `toy`) or space TOML.
 */
export function arch_resources(space_text: string, arch_id: string): string;

/**
 * Isomer groups of the `(embed, depth)` slice with exact member counts.
 */
export function isomer_groups(space_text: string, embed: number, depth: number): string;

/**
 * Kendall tau between two equally long score lists.
 */
export function kendall(xs: Float64Array, ys: Float64Array): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly arch_resources: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly isomer_groups: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly kendall: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
