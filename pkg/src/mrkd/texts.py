# src/mrkd/texts.py

CLI_DESCRIPTION = (
    "mrkd: обучение аудиоклассификаторов с многопредставленческой дистилляцией знаний.\n"
    "Все артефакты пишутся в рабочий каталог (--work-dir, MRKD_WORK_DIR или [output] work_dir)."
)

CLI_EPILOG = (
    "Типичный порядок: gen-synthetic -> extract -> train -> distill -> evaluate / ensemble-eval -> compare"
)

# Заголовки ошибок по коду возврата
ERROR_HEADERS = {
    1: "Внутренняя ошибка",
    2: "Ошибка конфигурации или параметров",
    3: "Не выполнен предыдущий шаг",
    4: "Ошибка данных",
    5: "Численная ошибка обучения",
}

ERROR_TEMPLATE = "{header} [{category}]: {message}"
UNEXPECTED_ERROR = "Непредвиденная ошибка, подробности в логе: {message}"

DRY_RUN_OK = "Проверка пройдена (--dry-run): конфиг корректен, предусловия выполнены. Ничего не записано."

GEN_SYNTHETIC_DONE = "Синтетический корпус: {n_clips} клипов, {n_classes} классов -> {manifest}"
EXTRACT_DONE = "Признаки извлечены: {representation}, {n_clips} клипов -> {directory}"
TRAIN_DONE = "Независимое обучение завершено: ветка {branch_id}, чекпоинт {path}"
DISTILL_DONE = "Дистилляция завершена: {n_cycles} циклов, {n_branches} веток, журнал {log}"
EXPORT_DONE = "Логиты сохранены: {n_rows} строк -> {path}"

METRICS_HEADER = "Метрики [{name}]: accuracy={accuracy:.4f}, mAP@3={map_at_3:.4f}, клипов={n}"

COMPARE_HEADER = "ветка\tпредставление\tacc\tacc*\tΔacc\tmAP@3\tmAP@3*\tΔmAP@3"
COMPARE_ROW = "{branch}\t{representation}\t{acc:.4f}\t{acc_star:.4f}\t{d_acc:+.4f}\t{map3:.4f}\t{map3_star:.4f}\t{d_map3:+.4f}"
COMPARE_ENSEMBLE_ROW = "ансамбль\t-\t{acc:.4f}\t{acc_star:.4f}\t{d_acc:+.4f}\t{map3:.4f}\t{map3_star:.4f}\t{d_map3:+.4f}"
COMPARE_NOTE = "Колонки со звёздочкой: ветки после дистилляции; без звёздочки: независимое обучение."
